"""Desk-scale sample-quality metrics and cost accounting."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .guidance import GuidanceSpec
from .schedule import NoiseSchedule
from .solvers import ddim_sample, signal_ode_sample

__all__ = [
    "SampleSet",
    "energy_distance",
    "mode_coverage",
    "trajectory_divergence",
    "guidance_sweep",
    "speed_report",
    "scatter_svg",
]


@dataclass
class SampleSet:
    points: np.ndarray
    labels: np.ndarray | None = None
    seed: int | None = None
    tag: str = ""

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.points)


def _points(a) -> np.ndarray:
    return a.points if isinstance(a, SampleSet) else np.atleast_2d(np.asarray(a, dtype=np.float64))


def energy_distance(a, b) -> float:
    """2 E|A-B| - E|A-A'| - E|B-B'| over all pairs (V-statistic, zero diagonals kept).

    Non-negative, symmetric, zero exactly when the two point multisets define
    the same empirical distribution.
    """
    x, y = _points(a), _points(b)
    if len(x) == 0 or len(y) == 0:
        raise ValueError("energy distance needs non-empty sample sets")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    xy = cdist(x, y).mean()
    xx = cdist(x, x).mean()
    yy = cdist(y, y).mean()
    return float(max(2.0 * xy - xx - yy, 0.0))


def mode_coverage(samples, centers, radius: float, threshold: float = 0.05):
    """Number of centres receiving at least ``threshold`` of the samples within ``radius``.

    Returns ``(covered, fractions)``.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    x = _points(samples)
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    d = cdist(x, centers)
    nearest = d.argmin(axis=1)
    inside = d[np.arange(len(x)), nearest] <= radius
    fractions = np.array([np.mean(inside & (nearest == k)) for k in range(len(centers))])
    return int(np.sum(fractions >= threshold)), fractions


def trajectory_divergence(student, teacher, eps, t_grid, sched: NoiseSchedule, spec: GuidanceSpec | None = None,
                          ref_steps: int = 512, reference=None) -> np.ndarray:
    """Mean over noises of ||y_theta(eps, t) - y_t^ref(eps)|| at each grid time.

    The reference is the Heun Signal-ODE solution on ``ref_steps`` uniform
    steps, read off at the nearest grid node.  Pass ``reference(t) -> y`` to
    substitute another reference trajectory.
    """
    eps = np.asarray(eps, dtype=np.float64)
    t_grid = np.asarray(t_grid, dtype=np.float64)
    if np.any(t_grid < sched.t_min - 1e-12) or np.any(t_grid > sched.t_max + 1e-12):
        raise ValueError("t grid must lie within [t_min, t_max]")
    if reference is None:
        _, rec = signal_ode_sample(teacher, eps, ref_steps, sched, method="heun", guidance=spec)
        times = np.asarray(rec.times)

        def reference(t):
            return rec.states[int(np.argmin(np.abs(times - t)))]

    cond = None if spec is None else spec.condition
    w = None
    if getattr(student, "w_conditioned", False):
        w = np.full(len(eps), 1.0 if spec is None else float(np.asarray(spec.weight).ravel()[0]))
    out = []
    for t in t_grid:
        y = student.sample(eps, float(t), cond, w)
        out.append(np.linalg.norm(y - reference(float(t)), axis=1).mean())
    return np.array(out)


def guidance_sweep(student, weights, condition: int, centers, eps, weight_range=None):
    """Rows of (w, mean nearest-centre distance, covariance trace) for a w-conditioned student."""
    eps = np.asarray(eps, dtype=np.float64)
    centers = np.atleast_2d(centers)
    rows = []
    for w in weights:
        if weight_range is not None and not weight_range[0] <= w <= weight_range[1]:
            warnings.warn(f"guidance weight {w} outside trained range {weight_range}", stacklevel=2)
        x = student.sample(eps, student.sched.t_min, np.full(len(eps), condition), np.full(len(eps), float(w)))
        nearest = cdist(x, centers).min(axis=1).mean()
        trace = float(np.trace(np.cov(x.T)))
        rows.append((float(w), float(nearest), trace))
    return rows


def speed_report(teacher, student, n: int, ddim_steps: int, sched: NoiseSchedule, seed: int = 0, repeats: int = 3):
    """Wall-clock of DDIM teacher sampling vs single-pass student sampling.

    Returns a dict with best-of-``repeats`` seconds, their ratio and per-sample NFEs.
    """
    eps = np.random.default_rng(seed).standard_normal((n, student.dim))
    t_teacher, t_student = [], []
    for _ in range(repeats):
        teacher.counter.reset()
        start = time.perf_counter()
        ddim_sample(teacher, eps, ddim_steps, sched)
        t_teacher.append(time.perf_counter() - start)
        teacher_nfe = teacher.counter.nfe
        student.counter.reset()
        start = time.perf_counter()
        student.sample(eps, sched.t_min)
        t_student.append(time.perf_counter() - start)
        student_nfe = student.counter.nfe
    tt, ts = min(t_teacher), min(t_student)
    return {
        "teacher_seconds": tt,
        "student_seconds": ts,
        "ratio": tt / ts,
        "teacher_nfe": teacher_nfe,
        "student_nfe": student_nfe,
        "teacher_nfe_per_sample": teacher_nfe / n,
        "student_nfe_per_sample": student_nfe / n,
    }


def scatter_svg(points, path=None, radius: float = 0.03, colors=None, size: int = 400) -> str:
    """Plain SVG 1.1 scatter plot, one <circle> per point, viewBox fitted to the data."""
    x = _points(points)
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    pad = 0.05 * max(float(np.max(hi - lo)), 1e-9)
    lo, hi = lo - pad, hi + pad
    w, h = hi - lo
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{size}" '
        f'viewBox="{lo[0]:.6g} {-hi[1]:.6g} {w:.6g} {h:.6g}">',
    ]
    r = radius * max(w, h) / 2
    for i, (px, py) in enumerate(x[:, :2]):
        fill = "black" if colors is None else colors[i % len(colors)]
        lines.append(f'<circle cx="{px:.6g}" cy="{-py:.6g}" r="{r:.4g}" fill="{fill}" fill-opacity="0.5"/>')
    lines.append("</svg>")
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
