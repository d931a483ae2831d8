"""Comparison baselines: direct distillation and data-driven consistency training.

Neither is part of the data-free method; both exist so that the evaluation
can show what bootstrapping buys.  Direct distillation pays a full teacher
solve per training sample; consistency training needs real data.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .boot import _col, clamp_s
from .schedule import NoiseSchedule, alpha_sigma
from .solvers import ddim_sample, ddim_step
from .teacher import DenoiserNet, NFECounter, signal_from_output
from .tensorcore import ParamSet, Tape, adamw_step, backward, ema_update, no_grad

__all__ = ["direct_distill_baseline", "ConsistencyStudent", "consistency_baseline"]


def direct_distill_baseline(
    teacher,
    student,
    steps: int,
    n_ode_steps: int,
    lr: float = 1e-3,
    batch: int = 128,
    rng: np.random.Generator | None = None,
    callback: Callable[[int, float], None] | None = None,
):
    """Regress ``y_theta(eps, t_min)`` onto an ``n_ode_steps`` DDIM solve from fresh noise.

    The target is expressed in signal space, ``(x - sigma eps) / alpha`` at
    ``t_min``, so that any Signal-ODE student can be trained this way.
    Each update costs ``batch * n_ode_steps`` teacher evaluations.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    sched = student.sched
    a, s = alpha_sigma(sched, sched.t_min)
    for step in range(steps):
        eps = rng.standard_normal((batch, student.dim))
        x0, _ = ddim_sample(teacher, eps, n_ode_steps, sched)
        target = (x0 - s * eps) / a
        with Tape() as tape:
            diff = student.forward(eps, np.full(batch, sched.t_min)) - target
            loss = (diff * diff).sum(axis=1).mean()
        value = float(loss.data)
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite direct-distillation loss at step {step}")
        adamw_step(student.params, student.params.grads(backward(tape, loss)), lr, 0.0)
        if callback is not None:
            callback(step, value)
    return student


class ConsistencyStudent:
    """g(x_t, t) = c_skip(t) x_t + (1 - c_skip(t)) F(x_t, t).

    F is a copy of the teacher network read as a signal predictor, and
    ``c_skip`` equals 1 at ``t_min`` so that g is the identity there.
    """

    def __init__(self, params: ParamSet, net: DenoiserNet, sigma_data: float = 1.0):
        self.params = params
        self.net = net
        self.sched = net.sched
        self.dim = net.dim
        self.sigma_data = sigma_data
        self.counter = NFECounter()

    @classmethod
    def from_teacher(cls, teacher: DenoiserNet, sigma_data: float = 1.0) -> "ConsistencyStudent":
        ps = teacher.params.copy()
        ps.step = 0
        for name in ps.names():
            ps.m[name][...] = 0.0
            ps.v[name][...] = 0.0
        ps.shadow = {k: p.data.copy() for k, p in ps.params.items()}
        return cls(ps, teacher, sigma_data)

    def c_skip(self, t) -> np.ndarray:
        a, s = alpha_sigma(self.sched, t)
        a0, s0 = alpha_sigma(self.sched, self.sched.t_min)
        r = s / a - s0 / a0
        return self.sigma_data**2 / (self.sigma_data**2 + r**2)

    def forward(self, x, t, params: ParamSet | None = None):
        x = np.asarray(x, dtype=np.float64)
        n = len(x)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        self.counter.add(n)
        out = self.net.forward(x, t, None, params=params or self.params)
        out = signal_from_output(self.net.kind, out, x, t, self.sched)
        c = _col(self.c_skip(t))
        return out * (1.0 - c) + c * x

    def sample(self, eps, t=None, cond=None, w=None) -> np.ndarray:
        """One evaluation at ``t_max`` (or ``t``) on input noise."""
        t = self.sched.t_max if t is None else t
        with no_grad():
            return self.forward(eps, t).data

    def target_view(self) -> "ConsistencyStudent":
        return ConsistencyStudent(self.params.ema_view(), self.net, self.sigma_data)


def consistency_baseline(
    teacher,
    sampler: Callable,
    student: ConsistencyStudent,
    steps: int,
    delta: float = 0.04,
    lr: float = 1e-4,
    target_decay: float = 0.95,
    batch: int = 128,
    rng: np.random.Generator | None = None,
    callback: Callable[[int, float], None] | None = None,
) -> ConsistencyStudent:
    """Consistency distillation against an EMA target network theta^-.

    Per step: data ``x0`` and noise give ``x_t``; one teacher DDIM step gives
    ``x_s``; the loss is ``||g_theta(x_t, t) - SG(g_theta^-(x_s, s))||^2``.
    theta^- (the EMA shadow of the parameters) only ever moves by the EMA
    update.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    sched: NoiseSchedule = student.sched
    span = sched.t_max - sched.t_min
    for step in range(steps):
        x0, _ = sampler(rng, batch)
        z = rng.standard_normal(x0.shape)
        t = sched.t_max - rng.random(batch) * span
        t = np.maximum(t, sched.t_min + 1e-9)
        s = clamp_s(t, delta, sched.t_min)
        a, sg = alpha_sigma(sched, t)
        x_t = _col(a) * x0 + _col(sg) * z
        x_s = ddim_step(teacher, x_t, t, s, sched)
        with no_grad():
            target = student.forward(x_s, s, params=student.params.ema_view()).data
        with Tape() as tape:
            diff = student.forward(x_t, t) - target
            loss = (diff * diff).sum(axis=1).mean()
        value = float(loss.data)
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite consistency loss at step {step}")
        adamw_step(student.params, student.params.grads(backward(tape, loss)), lr, 0.0)
        ema_update(student.params, target_decay)
        if callback is not None:
            callback(step, value)
    return student
