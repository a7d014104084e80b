"""CSV form of a RunLog: ``epoch,phase,k,lambda,f1,f2,tcheb,z1,z2``."""

from __future__ import annotations

import csv
from pathlib import Path

from hybridmo.driver import LogRow, RunLog
from hybridmo.metrics import fmt17

LOG_COLUMNS = ("epoch", "phase", "k", "lambda", "f1", "f2", "tcheb", "z1", "z2")


def write_log_csv(log: RunLog | list[LogRow], path) -> Path:
    rows = log.rows if isinstance(log, RunLog) else log
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r.epoch, r.phase, r.k, *(fmt17(v) for v in (r.lam, r.f1, r.f2, r.tcheb, r.z1, r.z2))])
    return path


def read_log_csv(path) -> RunLog:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != LOG_COLUMNS:
            raise ValueError(f"{path}: expected columns {','.join(LOG_COLUMNS)}")
        rows = [LogRow(int(r["epoch"]), r["phase"], int(r["k"]), float(r["lambda"]), float(r["f1"]),
                       float(r["f2"]), float(r["tcheb"]), float(r["z1"]), float(r["z2"])) for r in reader]
    return RunLog(rows)
