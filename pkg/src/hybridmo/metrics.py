"""Pareto-front quality measures for two minimised objectives."""

from __future__ import annotations

import csv
import math
import warnings
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class FrontPoint:
    f1: float
    f2: float
    tag: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.f1) and math.isfinite(self.f2)):
            raise ValueError(f"front point ({self.f1}, {self.f2}) is not finite")

    @property
    def values(self) -> tuple[float, float]:
        return (self.f1, self.f2)


FrontSet = list[FrontPoint]


def as_front(points: Iterable, tags: Sequence[str] | None = None) -> FrontSet:
    """Build a front from FrontPoints or (f1, f2) pairs; tags default to the index."""
    out = []
    for i, p in enumerate(points):
        if isinstance(p, FrontPoint):
            out.append(p)
        else:
            tag = tags[i] if tags is not None else str(i)
            out.append(FrontPoint(float(p[0]), float(p[1]), tag))
    return out


def _pair(p) -> tuple[float, float]:
    return (p.f1, p.f2) if isinstance(p, FrontPoint) else (float(p[0]), float(p[1]))


def dominates(a, b) -> bool:
    (a1, a2), (b1, b2) = _pair(a), _pair(b)
    return a1 <= b1 and a2 <= b2 and (a1 < b1 or a2 < b2)


def pareto_filter(front: Iterable) -> FrontSet:
    """Nondominated subset in input order; exact duplicate values are kept once."""
    pts = as_front(front)
    out, seen = [], set()
    for i, p in enumerate(pts):
        if p.values in seen:
            continue
        if any(dominates(q, p) for j, q in enumerate(pts) if j != i):
            continue
        seen.add(p.values)
        out.append(p)
    return out


def default_reference(*fronts: Iterable, scale: float = 1.1) -> FrontPoint:
    """Componentwise max over all given fronts, times ``scale``."""
    pts = [_pair(p) for f in fronts for p in f]
    if not pts:
        raise ValueError("no points to derive a reference from")
    arr = np.array(pts)
    m = arr.max(axis=0) * scale
    return FrontPoint(float(m[0]), float(m[1]), "ref")


def hypervolume_2d(front: Iterable, ref) -> float:
    """Area dominated by ``front`` inside the box bounded by ``ref``.

    Points not strictly dominating the reference are dropped with a warning.
    """
    r1, r2 = _pair(ref)
    pts = as_front(front)
    kept = [p for p in pts if p.f1 < r1 and p.f2 < r2]
    if len(kept) < len(pts):
        warnings.warn(f"{len(pts) - len(kept)} point(s) outside the reference box were clipped", stacklevel=2)
    nd = sorted(pareto_filter(kept), key=lambda p: p.f1)
    area = 0.0
    for i, p in enumerate(nd):
        right = nd[i + 1].f1 if i + 1 < len(nd) else r1
        area += (right - p.f1) * (r2 - p.f2)
    return area


def igd(front: Iterable, reference: Iterable) -> float:
    """Mean distance from each reference point to its nearest front point."""
    f = np.array([_pair(p) for p in front], dtype=np.float64).reshape(-1, 2)
    r = np.array([_pair(p) for p in reference], dtype=np.float64).reshape(-1, 2)
    if f.shape[0] == 0 or r.shape[0] == 0:
        raise ValueError("igd needs a nonempty front and a nonempty reference")
    d = np.sqrt(((r[:, None, :] - f[None, :, :]) ** 2).sum(axis=2))
    return float(d.min(axis=1).mean())


def fmt17(x: float) -> str:
    return format(float(x), ".17g")


def export_front(front: Iterable, path) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tag", "f1", "f2"])
            for p in as_front(front):
                w.writerow([p.tag, fmt17(p.f1), fmt17(p.f2)])
    except OSError as exc:
        raise OSError(f"cannot write front to {path}: {exc}") from exc
    return path


def read_front(path) -> FrontSet:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [FrontPoint(float(r["f1"]), float(r["f2"]), r["tag"]) for r in rows]
