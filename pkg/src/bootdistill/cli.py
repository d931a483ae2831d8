"""Command-line entry point: ``bootdistill <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
``BOOT_LOG`` selects the log level (error, info, debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import experiments as ex
from .boot import BootConfig, sample_student
from .config import ConfigError, ExperimentConfig, load_config
from .guidance import GuidanceSpec
from .metrics import scatter_svg, speed_report
from .solvers import ddim_sample, signal_ode_sample
from .verify import format_report, run_checks

log = logging.getLogger("bootdistill")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = ExperimentConfig.from_dict(dict(cfg.to_dict(), seed=args.seed))
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train_teacher(args) -> int:
    cfg = _config(args)
    if args.steps is not None:
        cfg.teacher.steps = args.steps
    out = _out_dir(args, cfg)
    net, data = ex.fit_teacher(cfg)
    path = out / "teacher.json"
    ex.save_teacher(path, net, data)
    print(path)
    return 0


def _student_paths(args, cfg) -> tuple[Path, Path]:
    out = Path(args.out or cfg.out)
    if out.suffix == ".json":
        out.parent.mkdir(parents=True, exist_ok=True)
        ckpt = out
    else:
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / "student.json"
    log_path = Path(args.log) if args.log else ckpt.with_name("metrics.csv")
    return ckpt, log_path


def cmd_distill(args) -> int:
    cfg = _config(args)
    teacher, _ = ex.load_teacher(args.teacher)
    ckpt, log_path = _student_paths(args, cfg)
    if args.resume:
        d = ex.resume_distiller(args.resume, teacher)
    else:
        boot = cfg.boot if args.steps is None else BootConfig.from_dict(dict(cfg.boot.to_dict(), steps=args.steps))
        d = ex.make_distiller(teacher, boot, cfg.guidance, ex.streams(cfg.seed)["distill"])
    stop = d.cfg.steps if args.stop_at is None else min(args.stop_at, d.cfg.steps)
    with ex.MetricsLog(log_path, timing=args.timing, append=bool(args.resume)) as mlog:
        d.run(max(stop - d.step, 0), callback=mlog)
    ex.save_student(ckpt, d, teacher.meta())
    print(ckpt)
    return 0


def _load_any(path):
    with open(path) as fh:
        meta = json.load(fh).get("meta", {})
    if meta.get("role") == "student":
        return "student", ex.load_student(path)
    return "teacher", ex.load_teacher(path)[0]


def _spec(args):
    if args.cls is None:
        if args.w is not None:
            raise UsageError("--w needs --class")
        return None
    return GuidanceSpec(condition=args.cls, weight=1.0 if args.w is None else args.w)


def cmd_sample(args) -> int:
    role, model = _load_any(args.ckpt)
    seed = 0 if args.seed is None else args.seed
    eps = np.random.default_rng(seed).standard_normal((args.n, model.dim))
    sched = model.sched
    spec = _spec(args)
    a, s = sched.alpha_sigma(sched.t_min)
    if role == "student":
        if args.solver != "student":
            raise UsageError("student checkpoints sample with --solver student")
        x = a * sample_student(model, eps, spec=spec) + s * eps
    elif args.solver == "ddim":
        x, _ = ddim_sample(model, eps, args.steps, sched, guidance=spec)
    elif args.solver in ("signal-euler", "signal-heun"):
        y, _ = signal_ode_sample(model, eps, args.steps, sched, method=args.solver.split("-")[1], guidance=spec)
        x = a * y + s * eps
    else:
        raise UsageError(f"solver {args.solver!r} needs a student checkpoint")
    out = Path(args.out or "samples.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write(",".join(f"x{i}" for i in range(x.shape[1])) + "\n")
        for row in x:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    print(out)
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    teacher, data = ex.load_teacher(args.teacher)
    student = ex.load_student(args.student)
    out = _out_dir(args, cfg)
    e = cfg.eval
    res = ex.evaluate_student(student, teacher, data, e.n_samples, e.ddim_steps, cfg.seed, e.coverage_radius, e.coverage_threshold)
    samples = res.pop("_samples")
    if args.timing:
        res["speed"] = speed_report(teacher, student, 1000, e.ddim_steps, student.sched, cfg.seed)
    (out / "metrics.json").write_text(json.dumps(res, indent=2, sort_keys=True) + "\n")
    scatter_svg(samples["student"], out / "student.svg")
    scatter_svg(samples["teacher"], out / "teacher.svg")
    print(out / "metrics.json")
    return 0


def cmd_verify(args) -> int:
    checks = run_checks(quick=args.quick)
    report = format_report(checks)
    sys.stdout.write(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.txt").write_text(report)
    return 0 if all(c.passed for c in checks) else 1


def cmd_ablate(args) -> int:
    if args.name not in ex.ABLATIONS:
        raise UsageError(f"unknown ablation {args.name!r}; choose from {', '.join(ex.ABLATIONS)}")
    cfg = _config(args)
    teacher, data = ex.load_teacher(args.teacher)
    boot = cfg.boot if args.steps is None else BootConfig.from_dict(dict(cfg.boot.to_dict(), steps=args.steps))
    out = _out_dir(args, cfg) / args.name
    ex.run_ablation(args.name, teacher, data, boot, cfg.seed, out, cfg.eval.n_samples, cfg.eval.ddim_steps)
    print(out / "report.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment or BootConfig JSON")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--threads", type=int, default=1, help="BLAS/OpenMP thread cap (default 1)")
    common.add_argument("--out", help="output directory (distill also accepts a .json checkpoint path)")

    p = argparse.ArgumentParser(prog="bootdistill", description="Data-free single-step distillation on desk-scale toys.")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("train-teacher", parents=[common], help="train an MLP teacher")
    q.add_argument("--steps", type=int, help="override teacher.steps")
    q.set_defaults(fn=cmd_train_teacher)

    q = sub.add_parser("distill", parents=[common], help="distill a teacher into a 1-NFE student")
    q.add_argument("--teacher", required=True)
    q.add_argument("--log", help="per-step CSV (default: metrics.csv next to the checkpoint)")
    q.add_argument("--steps", type=int, help="override boot.steps")
    q.add_argument("--stop-at", type=int, help="stop after this many total steps (for partial runs)")
    q.add_argument("--resume", help="continue from a partial student checkpoint")
    q.add_argument("--timing", action="store_true", help="record real wall_ms instead of 0")
    q.set_defaults(fn=cmd_distill)

    q = sub.add_parser("sample", parents=[common], help="draw samples to CSV")
    q.add_argument("--ckpt", required=True, help="teacher or student checkpoint")
    q.add_argument("--steps", type=int, default=64)
    q.add_argument("--solver", choices=["ddim", "signal-euler", "signal-heun", "student"], default="ddim")
    q.add_argument("--n", type=int, default=1000)
    q.add_argument("--class", dest="cls", type=int)
    q.add_argument("--w", type=float)
    q.set_defaults(fn=cmd_sample)

    q = sub.add_parser("eval", parents=[common], help="metrics.json and SVG scatters for a student")
    q.add_argument("--teacher", required=True)
    q.add_argument("--student", required=True)
    q.add_argument("--timing", action="store_true", help="add a wall-clock speed report")
    q.set_defaults(fn=cmd_eval)

    q = sub.add_parser("verify", parents=[common], help="run the oracle checks")
    q.add_argument("--quick", action="store_true")
    q.set_defaults(fn=cmd_verify)

    q = sub.add_parser("ablate", parents=[common], help="paired ablation runs")
    q.add_argument("name", help="|".join(ex.ABLATIONS))
    q.add_argument("--teacher", required=True)
    q.add_argument("--steps", type=int, help="override boot.steps")
    q.set_defaults(fn=cmd_ablate)
    return p


def _setup_logging() -> None:
    level = os.environ.get("BOOT_LOG", "error").lower()
    if level not in LOG_LEVELS:
        raise UsageError(f"BOOT_LOG must be one of {', '.join(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        _setup_logging()
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        with threadpool_limits(limits=args.threads):
            return args.fn(args)
    except (UsageError, ConfigError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FloatingPointError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
