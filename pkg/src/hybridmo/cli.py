"""Command-line entry point.

Every command writes into a run directory::

    RUN/config.yaml        the fully defaulted configuration that was used
    RUN/checkpoints/*.json model checkpoints
    RUN/log.csv            epoch,phase,k,lambda,f1,f2,tcheb,z1,z2
    RUN/front.csv          tag,f1,f2
    RUN/report.txt         human-readable summary

``front`` and ``compare`` read existing run directories.
"""

from __future__ import annotations

import argparse
import math
import shutil
import sys
from pathlib import Path

import numpy as np

from hybridmo.checkpoint import Checkpoint, load_checkpoint, mlp_spec_dict, save_checkpoint
from hybridmo.config import RunConfig, config_hash, load_config, save_config
from hybridmo.driver import (
    TOY_SR,
    LogRow,
    RunLog,
    RunResult,
    make_task,
    pretrain,
    run,
    run_adam_baseline,
)
from hybridmo.evolution import weight_grid
from hybridmo.fusion import (
    LEARNABLE,
    SINGLE_LAYER,
    UNIFORM,
    assemble_fused,
    fuse_baselines,
    learn_weights,
    train_regressor,
    universal_fuse,
)
from hybridmo.logio import read_log_csv, write_log_csv
from hybridmo.metrics import (
    FrontPoint,
    as_front,
    default_reference,
    export_front,
    fmt17,
    hypervolume_2d,
    igd,
    pareto_filter,
    read_front,
)
from hybridmo.objectives import reference_front

CONFIG_NAME = "config.yaml"
CKPT_DIR = "checkpoints"


class CommandError(Exception):
    pass


def _load(path) -> RunConfig:
    return load_config(path) if path else RunConfig()


def _prepare(out, config: RunConfig) -> Path:
    out = Path(out)
    (out / CKPT_DIR).mkdir(parents=True, exist_ok=True)
    save_config(config, out / CONFIG_NAME)
    return out


def _gen_checkpoint(task, params, config: RunConfig, lam=None, epoch=None, role="generator") -> Checkpoint:
    spec = mlp_spec_dict(task.gen_spec) if config.train.problem == TOY_SR else None
    return Checkpoint(role, params, spec, lam, config_hash(config), epoch)


def _final_front(log: RunLog) -> list[FrontPoint]:
    last = max(r.epoch for r in log.rows)
    return [FrontPoint(r.f1, r.f2, str(r.k)) for r in log.rows if r.epoch == last]


def _analytic_reference(config: RunConfig):
    if config.train.problem == TOY_SR:
        return None
    return reference_front(make_task(config.train).problem)


def _report(out: Path, title: str, lines: list[str]) -> None:
    (out / "report.txt").write_text("\n".join([title, *lines]) + "\n")


def _front_lines(front, config: RunConfig) -> list[str]:
    nd = pareto_filter(front)
    ref = default_reference(front)
    lines = [
        f"points: {len(front)}, nondominated: {len(nd)}",
        f"hypervolume: {fmt17(hypervolume_2d(nd, ref))} (reference {fmt17(ref.f1)}, {fmt17(ref.f2)} = max x 1.1)",
    ]
    reference = _analytic_reference(config)
    if reference is not None:
        lines.append(f"igd to analytic front (101 samples): {fmt17(igd(front, reference))}")
    return lines


def _save_population(out: Path, result: RunResult, task, config: RunConfig, epoch: int) -> None:
    save_checkpoint(_gen_checkpoint(task, result.theta_g0, config, 1.0, 0), out / CKPT_DIR / "theta_g0.json")
    for k, ind in enumerate(result.population):
        save_checkpoint(_gen_checkpoint(task, ind.gen, config, ind.lam, epoch), out / CKPT_DIR / f"gen_{k}.json")
        if ind.disc is not None:
            save_checkpoint(Checkpoint("discriminator", ind.disc, mlp_spec_dict(task.disc_spec), ind.lam,
                                       config_hash(config), epoch), out / CKPT_DIR / f"disc_{k}.json")


def _theta_from(path):
    return load_checkpoint(path).params if path else None


# ---------------------------------------------------------------------------
# commands


def cmd_pretrain(args) -> None:
    config = _load(args.config)
    out = _prepare(args.out, config)
    task = make_task(config.train)
    history: list[float] = []
    theta = pretrain(config.train, task, history)
    save_checkpoint(_gen_checkpoint(task, theta, config, 1.0, config.train.pretrain_epochs),
                    out / CKPT_DIR / "theta_g0.json")
    values = task.evaluate(theta, None, task.log_batch())
    nan = math.nan
    write_log_csv([LogRow(config.train.pretrain_epochs, "pretrain", 0, 1.0, values.f1, values.f2, nan, nan, nan)],
                  out / "log.csv")
    export_front([FrontPoint(values.f1, values.f2, "theta_g0")], out / "front.csv")
    _report(out, "pretrain", [f"epoch {i + 1}: mean f1 {fmt17(v)}" for i, v in enumerate(history)]
            + [f"final f1 {fmt17(values.f1)}, f2 (no discriminator) {fmt17(values.f2)}"])


def _finish_run(out: Path, result: RunResult, config: RunConfig, title: str) -> None:
    task = make_task(config.train)
    write_log_csv(result.log, out / "log.csv")
    last = max(r.epoch for r in result.log.rows)
    _save_population(out, result, task, config, last)
    front = _final_front(result.log)
    export_front(front, out / "front.csv")
    lines = [f"{p.tag}: lambda {fmt17(ind.lam)} f1 {fmt17(p.f1)} f2 {fmt17(p.f2)}"
             for p, ind in zip(front, result.population)]
    _report(out, title, lines + _front_lines(front, config))


def cmd_train(args) -> None:
    config = _load(args.config)
    out = _prepare(args.out, config)
    _finish_run(out, run(config.train, _theta_from(args.theta_g0)), config, "EA-Adam run")


def cmd_baseline(args) -> None:
    config = _load(args.config)
    out = _prepare(args.out, config)
    weights = [float(w) for w in args.weights.split(",")] if args.weights else list(weight_grid(config.train.N))
    result = run_adam_baseline(config.train, weights, _theta_from(args.theta_g0))
    _finish_run(out, result, config, "Adam-only baseline")


def cmd_fuse(args) -> None:
    src = Path(args.run)
    config = load_config(args.config or src / CONFIG_NAME)
    if config.train.problem != TOY_SR:
        raise CommandError("fusion needs the toy-sr problem")
    out = _prepare(args.out, config)
    task = make_task(config.train)
    n = config.train.N
    ckpts = [load_checkpoint(src / CKPT_DIR / f"gen_{k}.json") for k in range(n)]
    experts = [c.params for c in ckpts]
    # judged by the perception-end expert's own discriminator
    judge = load_checkpoint(src / CKPT_DIR / f"disc_{n - 1}.json").params
    for k in range(n):
        shutil.copyfile(src / CKPT_DIR / f"gen_{k}.json", out / CKPT_DIR / f"gen_{k}.json")

    fc = config.fusion
    data = task.data
    disc0 = task.init_discriminator(fc.seed)
    validation = data.validation.inputs[:fc.M]
    reg, spec, _ = train_regressor(experts, task.gen_spec, data.train, disc0, task.disc_spec, fc, config.train.objective)
    w_bar, fused = universal_fuse(reg, spec, experts, validation)
    learned, _ = learn_weights(experts, task.gen_spec, data.train, disc0, task.disc_spec, fc, config.train.objective)
    h = config_hash(config)
    save_checkpoint(Checkpoint("fused", fused, mlp_spec_dict(task.gen_spec), None, h, fc.epochs,
                               {"universal_weights": w_bar}), out / CKPT_DIR / "fused.json")
    save_checkpoint(Checkpoint("regressor", reg, {"kind": "regressor", **spec.__dict__}, None, h, fc.epochs),
                    out / "regressor.json")
    base_dir = out / "baselines"
    base_dir.mkdir(exist_ok=True)
    models = {
        UNIFORM: fuse_baselines(experts, UNIFORM),
        SINGLE_LAYER: fuse_baselines(experts, SINGLE_LAYER, universal=w_bar),
        LEARNABLE: assemble_fused(experts, learned),
    }
    for name, params in models.items():
        save_checkpoint(Checkpoint("fused", params, mlp_spec_dict(task.gen_spec), None, h, fc.epochs),
                        base_dir / f"{name}.json")

    nan = math.nan
    rows, front = [], []
    table = [(f"expert_{k}", k, c.lam, c.params) for k, c in enumerate(ckpts)]
    table += [("fused", -1, nan, fused)] + [(name, -1, nan, p) for name, p in models.items()]
    for tag, k, lam, params in table:
        v = task.evaluate(params, judge, data.eval)
        rows.append(LogRow(0, tag, k, nan if lam is None else lam, v.f1, v.f2, nan, nan, nan))
        front.append(FrontPoint(v.f1, v.f2, tag))
    write_log_csv(rows, out / "log.csv")
    export_front(front, out / "front.csv")
    lines = [f"{p.tag}: f1 {fmt17(p.f1)} f2 {fmt17(p.f2)}" for p in front]
    lines.append("universal weights (rows = layout entries, columns = experts):")
    lines += ["  " + " ".join(f"{w:.4f}" for w in row) for row in w_bar]
    _report(out, f"fusion on the eval split, f2 judged by disc_{n - 1}", lines)


def cmd_eval(args) -> None:
    config = _load(args.config)
    out = _prepare(args.out, config)
    ckpt = load_checkpoint(args.checkpoint)
    task = make_task(config.train)
    disc = load_checkpoint(args.disc).params if args.disc else None
    batch = task.data.eval if config.train.problem == TOY_SR else None
    v = task.evaluate(ckpt.params, disc, batch)
    shutil.copyfile(args.checkpoint, out / CKPT_DIR / Path(args.checkpoint).name)
    nan = math.nan
    lam = nan if ckpt.lam is None else ckpt.lam
    write_log_csv([LogRow(0, "eval", 0, lam, v.f1, v.f2, nan, nan, nan)], out / "log.csv")
    export_front([FrontPoint(v.f1, v.f2, Path(args.checkpoint).stem)], out / "front.csv")
    _report(out, f"eval of {args.checkpoint}", [f"f1 {fmt17(v.f1)}", f"f2 {fmt17(v.f2)}"])


def cmd_front(args) -> None:
    src = Path(args.run)
    front = _final_front(read_log_csv(src / "log.csv"))
    if args.nondominated:
        front = pareto_filter(front)
    path = export_front(front, args.out or src / "front.csv")
    print(path)


def cmd_compare(args) -> None:
    a, b = Path(args.run_a), Path(args.run_b)
    fa, fb = read_front(a / "front.csv"), read_front(b / "front.csv")
    if not fa or not fb:
        raise CommandError("both runs need a nonempty front.csv")
    config = load_config(a / CONFIG_NAME) if (a / CONFIG_NAME).exists() else RunConfig()
    ref = default_reference(fa, fb)
    hv_a, hv_b = hypervolume_2d(fa, ref), hypervolume_2d(fb, ref)
    reference = _analytic_reference(config)
    if reference is None:
        reference = [p.values for p in pareto_filter(fa + fb)]
        ref_name = "combined nondominated front"
    else:
        ref_name = "analytic front (101 samples)"
    igd_a, igd_b = igd(fa, reference), igd(fb, reference)
    ratio = hv_a / hv_b if hv_b > 0 else math.nan
    lines = [
        f"A: {a}", f"B: {b}",
        f"reference point: {fmt17(ref.f1)}, {fmt17(ref.f2)} (componentwise max x 1.1)",
        f"hypervolume A: {fmt17(hv_a)}", f"hypervolume B: {fmt17(hv_b)}", f"hypervolume ratio A/B: {fmt17(ratio)}",
        f"igd reference: {ref_name}",
        f"igd A: {fmt17(igd_a)}", f"igd B: {fmt17(igd_b)}", f"igd difference A-B: {fmt17(igd_a - igd_b)}",
    ]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_front([FrontPoint(p.f1, p.f2, f"A:{p.tag}") for p in fa] + [FrontPoint(p.f1, p.f2, f"B:{p.tag}") for p in fb],
                 out / "front.csv")
    _report(out, "comparison", lines)
    print("\n".join(lines))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridmo", description="Hybrid evolutionary/Adam multi-objective training.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("pretrain", help="fidelity-only pretraining")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pretrain)

    for name, func, help_ in (("train", cmd_train, "EA-Adam run"), ("baseline", cmd_baseline, "Adam-only weight grid")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config")
        s.add_argument("--out", required=True)
        s.add_argument("--theta-g0", help="pretrained generator checkpoint (pretrains when omitted)")
        if name == "baseline":
            s.add_argument("--weights", help="comma-separated lambdas (default: the N-point grid)")
        s.set_defaults(func=func)

    s = sub.add_parser("fuse", help="fuse the experts of a train run")
    s.add_argument("--run", required=True, help="directory written by `train`")
    s.add_argument("--config", help="override the run's config snapshot")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("eval", help="objective values of a checkpoint on the eval split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--disc", help="discriminator checkpoint used for f2")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("front", help="export the final-epoch front of a run")
    s.add_argument("--run", required=True)
    s.add_argument("--out", help="CSV path (default RUN/front.csv)")
    s.add_argument("--nondominated", action="store_true")
    s.set_defaults(func=cmd_front)

    s = sub.add_parser("compare", help="hypervolume and IGD of two runs")
    s.add_argument("run_a")
    s.add_argument("run_b")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compare)
    return p


def run_command(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except (CommandError, ValueError, OSError, FloatingPointError) as exc:
        print(f"hybridmo {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
