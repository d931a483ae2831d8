"""End-to-end toy pipeline: teacher training, distillation, evaluation, ablations.

Randomness: a run's master seed feeds ``np.random.SeedSequence``; the
teacher, the distillation loop and the evaluation noise each get their
own child stream (see ``streams``), so changing the number of distillation
steps never changes the evaluation noise.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import replace
from pathlib import Path
from typing import Callable

import numpy as np

from .boot import BootConfig, Distiller, StudentNet, sample_student, student_from_meta
from .config import ExperimentConfig
from .data import make_dataset
from .guidance import GuidanceSpec
from .metrics import energy_distance, guidance_sweep, mode_coverage, scatter_svg
from .schedule import NoiseSchedule
from .solvers import ddim_sample
from .teacher import DenoiserNet, PredictionKind, train_teacher
from .tensorcore import load_checkpoint, paramset_from_dict, rng_from_state, save_checkpoint

log = logging.getLogger(__name__)

__all__ = [
    "streams",
    "toy_boot_config",
    "fit_teacher",
    "save_teacher",
    "load_teacher",
    "make_distiller",
    "save_student",
    "load_student",
    "resume_distiller",
    "MetricsLog",
    "distill_run",
    "evaluate_student",
    "guidance_report",
    "ABLATIONS",
    "run_ablation",
]

LOG_COLUMNS = ("step", "loss_bs", "loss_bc", "ema_decay", "wall_ms")


def streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for the teacher, distillation and evaluation stages."""
    children = np.random.SeedSequence(seed).spawn(3)
    return {name: np.random.default_rng(c) for name, c in zip(("teacher", "distill", "eval"), children)}


def toy_boot_config(**overrides) -> BootConfig:
    """Distillation settings used for the 2-D toys (EMA and learning rate suited to 20k steps)."""
    base = dict(delta=0.04, beta=1.0, lr=1e-4, ema_decay=0.999, batch=128, steps=20000)
    base.update(overrides)
    return BootConfig(**base)


# ---------------------------------------------------------------------------
# teachers


def fit_teacher(cfg: ExperimentConfig, rng: np.random.Generator | None = None, callback=None):
    """Train the MLP teacher described by ``cfg.teacher``; returns ``(net, dataset)``."""
    tc = cfg.teacher
    rng = rng if rng is not None else streams(cfg.seed)["teacher"]
    data = make_dataset(tc.dataset)
    net = DenoiserNet.create(rng, data.dim, cfg.schedule, tuple(tc.hidden), PredictionKind(tc.kind), data.n_classes)
    train_teacher(data.sample, net, cfg.schedule, tc.steps, tc.lr, tc.uncond_prob, tc.batch, rng, callback=callback)
    return net, data


def _sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".sidecar.json")


def save_teacher(path, net: DenoiserNet, dataset) -> None:
    """Checkpoint plus a sidecar ``{"dataset", "kind", "schedule"}`` next to it."""
    meta = dict(net.meta(), dataset=dataset.to_dict())
    save_checkpoint(path, net.params, meta=meta)
    side = {"dataset": dataset.to_dict(), "kind": net.kind.value, "schedule": net.sched.to_dict()}
    _sidecar(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def load_teacher(path):
    """Returns ``(net, dataset)``."""
    ps, _, meta = load_checkpoint(path)
    if meta.get("model") != "denoiser":
        raise ValueError(f"{path} is not a teacher checkpoint")
    return DenoiserNet.from_meta(ps, meta), make_dataset(meta["dataset"])


# ---------------------------------------------------------------------------
# students


def make_distiller(teacher: DenoiserNet, cfg: BootConfig, spec: GuidanceSpec | None, rng: np.random.Generator) -> Distiller:
    w_cond = spec is not None and spec.weight_range is not None
    student = StudentNet.from_teacher(teacher, cfg.sched, w_conditioned=w_cond)
    return Distiller(teacher, student, cfg, spec, rng=rng)


def save_student(path, d: Distiller, teacher_meta: dict | None = None) -> None:
    meta = {
        "role": "student",
        "student": d.student.meta(),
        "boot": d.cfg.to_dict(),
        "guidance": None if d.spec is None else d.spec.to_dict(),
        "step": d.step,
        "teacher": teacher_meta,
    }
    save_checkpoint(path, d.student.params, d.rng, meta)


def load_student(path, ema: bool = True):
    """The EMA student (or the live weights) from a student checkpoint."""
    ps, _, meta = load_checkpoint(path)
    if meta.get("role") != "student":
        raise ValueError(f"{path} is not a student checkpoint")
    student = student_from_meta(ps, meta["student"])
    return student.with_params(ps.ema_view()) if ema else student


def resume_distiller(path, teacher: DenoiserNet) -> Distiller:
    """Rebuild a :class:`Distiller` (weights, moments, EMA, RNG, step) from a checkpoint."""
    with open(path) as fh:
        raw = json.load(fh)
    ps, rng_state, meta = paramset_from_dict(raw)
    if meta.get("role") != "student":
        raise ValueError(f"{path} is not a student checkpoint")
    student = student_from_meta(ps, meta["student"])
    cfg = BootConfig.from_dict(meta["boot"])
    spec = None if meta["guidance"] is None else GuidanceSpec.from_dict(meta["guidance"])
    return Distiller(teacher, student, cfg, spec, rng=rng_from_state(rng_state), step=meta["step"])


class MetricsLog:
    """Per-step CSV log; ``wall_ms`` is written as 0 unless ``timing`` is set, keeping files reproducible."""

    def __init__(self, path, timing: bool = False, append: bool = False):
        self.path = Path(path)
        self.timing = timing
        new = not (append and self.path.exists())
        self._fh = open(self.path, "w" if new else "a", newline="")
        self._writer = csv.writer(self._fh)
        if new:
            self._writer.writerow(LOG_COLUMNS)

    def __call__(self, row: dict) -> None:
        row = dict(row, wall_ms=row["wall_ms"] if self.timing else 0.0)
        self._writer.writerow([row["step"]] + [repr(float(row[k])) for k in LOG_COLUMNS[1:]])

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def distill_run(
    teacher: DenoiserNet,
    cfg: BootConfig,
    spec: GuidanceSpec | None = None,
    rng: np.random.Generator | None = None,
    callback: Callable[[dict], None] | None = None,
) -> Distiller:
    d = make_distiller(teacher, cfg, spec, rng if rng is not None else np.random.default_rng(0))
    d.run(callback=callback)
    return d


# ---------------------------------------------------------------------------
# evaluation


def _to_x(y, eps, sched: NoiseSchedule):
    a, s = sched.alpha_sigma(sched.t_min)
    return a * y + s * eps


def evaluate_student(student, teacher, dataset, n: int = 2000, ddim_steps: int = 64, seed: int = 0,
                     radius: float = 0.6, threshold: float = 0.05, spec: GuidanceSpec | None = None) -> dict:
    """Energy distances and mode coverage of 1-NFE student samples against DDIM teacher samples.

    ``energy_distance`` compares student and teacher samples drawn from the
    same noises (the student approximates the teacher's deterministic map);
    ``energy_distance_unpaired`` uses the second noise set for the student.
    ``teacher_floor`` is the distance between two independent teacher sets.
    """
    rng = streams(seed)["eval"]
    sched = student.sched
    e1 = rng.standard_normal((n, student.dim))
    e2 = rng.standard_normal((n, student.dim))
    t1, _ = ddim_sample(teacher, e1, ddim_steps, sched, guidance=spec)
    t2, _ = ddim_sample(teacher, e2, ddim_steps, sched, guidance=spec)
    s1 = _to_x(sample_student(student, e1, spec=spec), e1, sched)
    s2 = _to_x(sample_student(student, e2, spec=spec), e2, sched)
    floor = energy_distance(t1, t2)
    ed = energy_distance(s1, t1)
    cov, frac = mode_coverage(s1, dataset.centers, radius, threshold)
    t_cov, t_frac = mode_coverage(t1, dataset.centers, radius, threshold)
    return {
        "energy_distance": ed,
        "energy_distance_unpaired": energy_distance(s2, t1),
        "teacher_floor": floor,
        "ratio_to_floor": ed / floor if floor > 0 else float("inf"),
        "mode_coverage": cov,
        "mode_fractions": frac.tolist(),
        "teacher_mode_coverage": t_cov,
        "teacher_mode_fractions": t_frac.tolist(),
        "n": n,
        "ddim_steps": ddim_steps,
        "_samples": {"student": s1, "teacher": t1},
    }


def guidance_report(student, dataset, weights=(1.0, 2.0, 3.0), n: int = 2000, seed: int = 0) -> dict:
    """Per-class sweep rows and their class average, for a w-conditioned student."""
    rng = streams(seed)["eval"]
    eps = rng.standard_normal((n, student.dim))
    per_class = {}
    for c in range(dataset.n_classes):
        per_class[c] = guidance_sweep(student, weights, c, dataset.class_centers(c), eps)
    mean_rows = []
    for i, w in enumerate(weights):
        mean_rows.append(
            (float(w), float(np.mean([per_class[c][i][1] for c in per_class])), float(np.mean([per_class[c][i][2] for c in per_class])))
        )
    return {"weights": list(map(float, weights)), "per_class": {str(c): rows for c, rows in per_class.items()}, "mean": mean_rows}


# ---------------------------------------------------------------------------
# ablations


def _variants(name: str, base: BootConfig) -> dict[str, BootConfig]:
    if name == "boundary":
        return {"beta1": replace(base, beta=1.0), "beta0": replace(base, beta=0.0)}
    if name == "time_sampling":
        return {"uniform": replace(base, time_sampling="uniform"), "progressive": replace(base, time_sampling="progressive")}
    if name == "solver_order":
        return {"euler": replace(base, target_solver="euler"), "heun": replace(base, target_solver="heun")}
    raise KeyError(name)


ABLATIONS = ("boundary", "time_sampling", "guidance", "solver_order")


def run_ablation(name: str, teacher: DenoiserNet, dataset, base: BootConfig, seed: int, out_dir,
                 n_eval: int = 2000, ddim_steps: int = 64, weights=(1.0, 2.0, 3.0),
                 weight_range=(1.0, 5.0)) -> dict:
    """Train the paired configurations of one ablation and write ckpts, SVGs and ``report.json``."""
    if name not in ABLATIONS:
        raise KeyError(f"unknown ablation {name!r}; choose from {ABLATIONS}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report: dict = {"ablation": name, "seed": seed, "variants": {}}
    if name == "guidance":
        if not teacher.conditional:
            raise ValueError("the guidance ablation needs a class-conditional teacher")
        cfg = replace(base, weighting="inv_lambda_prime_sq")
        spec = GuidanceSpec(weight_range=weight_range)
        d = distill_run(teacher, cfg, spec, streams(seed)["distill"])
        save_student(out / "student_w.json", d, teacher.meta())
        rep = guidance_report(d.ema_student(), dataset, weights, n_eval, seed)
        report["variants"]["w_conditioned"] = rep
        _write_json(out / "report.json", report)
        return report
    for tag, cfg in _variants(name, base).items():
        d = distill_run(teacher, cfg, None, streams(seed)["distill"])
        save_student(out / f"student_{tag}.json", d, teacher.meta())
        res = evaluate_student(d.ema_student(), teacher, dataset, n_eval, ddim_steps, seed)
        samples = res.pop("_samples")
        scatter_svg(samples["student"], out / f"samples_{tag}.svg")
        report["variants"][tag] = res
        log.info("ablation %s/%s: ed=%.4g coverage=%d", name, tag, res["energy_distance"], res["mode_coverage"])
    _write_json(out / "report.json", report)
    return report


def _write_json(path, obj) -> None:
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)
