"""Deterministic samplers: DDIM in x-space and the Signal-ODE in y-space.

With a fixed noise ``eps`` the two views are tied by
``x_t = alpha_t * y_t + sigma_t * eps``.  Stepping y with the exact
log-SNR decay factor reproduces DDIM to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .guidance import GuidanceSpec, denoise
from .schedule import NoiseSchedule, alpha_sigma, decay_factor, half_log_snr, lambda_prime

__all__ = [
    "TrajectoryRecord",
    "time_grid",
    "ddim_step",
    "ddim_sample",
    "signal_ode_step",
    "euler_signal_ode_step",
    "heun_signal_ode_step",
    "signal_ode_sample",
    "initial_signal",
    "SIGNAL_STEPS",
]


@dataclass
class TrajectoryRecord:
    times: list[float]
    states: list[np.ndarray]
    space: str
    noise: np.ndarray
    sched: NoiseSchedule = field(default_factory=NoiseSchedule, repr=False)

    def __post_init__(self):
        if self.space not in ("x_space", "y_space"):
            raise ValueError(f"unknown space {self.space!r}")

    def x_states(self) -> list[np.ndarray]:
        if self.space == "x_space":
            return self.states
        out = []
        for t, y in zip(self.times, self.states):
            a, s = alpha_sigma(self.sched, t)
            out.append(a * y + s * self.noise)
        return out

    def y_states(self) -> list[np.ndarray]:
        if self.space == "y_space":
            return self.states
        out = []
        for t, x in zip(self.times, self.states):
            a, s = alpha_sigma(self.sched, t)
            out.append((x - s * self.noise) / a)
        return out


def time_grid(t_hi: float, t_lo: float, n_steps: int) -> np.ndarray:
    """Uniform, strictly decreasing grid with ``n_steps + 1`` points."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    return np.linspace(t_hi, t_lo, n_steps + 1)


def _col(v):
    v = np.asarray(v, dtype=np.float64)
    return v[:, None] if v.ndim == 1 else v


def _check_order(t, s):
    if np.any(np.asarray(s) > np.asarray(t)):
        raise ValueError(f"solver steps must go backwards in time (s={s}, t={t})")


def ddim_step(teacher, x_t, t, s, sched: NoiseSchedule, guidance: GuidanceSpec | None = None, clip=None):
    """x_s = (sigma_s/sigma_t) x_t + (alpha_s - alpha_t sigma_s/sigma_t) f."""
    _check_order(t, s)
    a_t, s_t = alpha_sigma(sched, t)
    a_s, s_s = alpha_sigma(sched, s)
    f = denoise(teacher, x_t, t, guidance, clip)
    r = _col(s_s / s_t)
    return r * x_t + (_col(a_s) - _col(a_t) * r) * f


def ddim_sample(teacher, eps, n_steps: int, sched: NoiseSchedule, guidance=None, clip=None, t_hi=None, t_lo=None):
    """Run DDIM from ``x_{t_max} = eps`` down to ``t_min``."""
    grid = time_grid(sched.t_max if t_hi is None else t_hi, sched.t_min if t_lo is None else t_lo, n_steps)
    x = np.asarray(eps, dtype=np.float64)
    states = [x]
    for t, s in zip(grid[:-1], grid[1:]):
        x = ddim_step(teacher, x, t, s, sched, guidance, clip)
        states.append(x)
    return x, TrajectoryRecord(list(map(float, grid)), states, "x_space", np.asarray(eps), sched)


def _x_hat(y, eps, t, sched):
    a, s = alpha_sigma(sched, t)
    return _col(a) * y + _col(s) * eps


def signal_ode_step(teacher, y_t, eps, t, s, sched: NoiseSchedule, guidance=None, clip=None):
    """y_s = (1 - e^{lambda_s - lambda_t}) f(x_t, t) + e^{lambda_s - lambda_t} y_t."""
    _check_order(t, s)
    f = denoise(teacher, _x_hat(y_t, eps, t, sched), t, guidance, clip)
    e = _col(decay_factor(sched, t, s))
    return (1.0 - e) * f + e * y_t


def _check_delta(t, delta, sched):
    s = np.asarray(t) - np.asarray(delta)
    if np.any(s < sched.t_min - 1e-12):
        raise ValueError(f"step from t={t} by {delta} crosses t_min={sched.t_min}; clamp the step")
    return s


def euler_signal_ode_step(teacher, y_t, eps, t, delta, sched: NoiseSchedule, guidance=None, clip=None):
    """Explicit Euler on dy/dt = -lambda'_t (f - y): y + delta lambda'_t (f - y)."""
    _check_delta(t, delta, sched)
    f = denoise(teacher, _x_hat(y_t, eps, t, sched), t, guidance, clip)
    return y_t + _col(np.asarray(delta) * lambda_prime(sched, t)) * (f - y_t)


def heun_signal_ode_step(teacher, y_t, eps, t, delta, sched: NoiseSchedule, guidance=None, clip=None):
    """Predictor-corrector step with two teacher evaluations.

    The step is taken in log-SNR time: the increment multiplying both slopes
    is ``h = lambda_t - lambda_s`` (delta times the mean of lambda' over the
    step), which keeps the corrector second-order accurate.
    """
    s = _check_delta(t, delta, sched)
    h = _col(half_log_snr(sched, t) - half_log_snr(sched, s))
    k1 = denoise(teacher, _x_hat(y_t, eps, t, sched), t, guidance, clip) - y_t
    y_pred = y_t + h * k1
    k2 = denoise(teacher, _x_hat(y_pred, eps, s, sched), s, guidance, clip) - y_pred
    return y_t + 0.5 * h * (k1 + k2)


def initial_signal(eps, sched: NoiseSchedule, mode: str = "consistent", t=None):
    """Starting value for y at the top of the range.

    ``"noise"`` uses y = eps; ``"consistent"`` uses y = (eps - sigma eps)/alpha
    so that the reconstructed x equals eps exactly, matching DDIM's start.
    """
    t = sched.t_max if t is None else t
    eps = np.asarray(eps, dtype=np.float64)
    if mode == "noise":
        return eps.copy()
    if mode == "consistent":
        a, s = alpha_sigma(sched, t)
        return (eps - s * eps) / a
    raise ValueError(f"unknown y_init mode {mode!r}")


def _exact_step(teacher, y, eps, t, s, sched, guidance, clip):
    return signal_ode_step(teacher, y, eps, t, s, sched, guidance, clip)


def _euler_step(teacher, y, eps, t, s, sched, guidance, clip):
    return euler_signal_ode_step(teacher, y, eps, t, t - s, sched, guidance, clip)


def _heun_step(teacher, y, eps, t, s, sched, guidance, clip):
    return heun_signal_ode_step(teacher, y, eps, t, t - s, sched, guidance, clip)


SIGNAL_STEPS: dict[str, Callable] = {"exact": _exact_step, "euler": _euler_step, "heun": _heun_step}


def signal_ode_sample(
    teacher,
    eps,
    n_steps: int,
    sched: NoiseSchedule,
    method: str = "exact",
    y_init: str | np.ndarray = "consistent",
    guidance=None,
    clip=None,
    t_hi=None,
    t_lo=None,
):
    """Integrate the Signal-ODE on a uniform grid; returns ``(y_final, record)``."""
    step = SIGNAL_STEPS[method]
    t_hi = sched.t_max if t_hi is None else t_hi
    t_lo = sched.t_min if t_lo is None else t_lo
    grid = time_grid(t_hi, t_lo, n_steps)
    eps = np.asarray(eps, dtype=np.float64)
    y = initial_signal(eps, sched, y_init, t_hi) if isinstance(y_init, str) else np.asarray(y_init, dtype=np.float64)
    states = [y]
    for t, s in zip(grid[:-1], grid[1:]):
        y = step(teacher, y, eps, float(t), float(s), sched, guidance, clip)
        states.append(y)
    return y, TrajectoryRecord(list(map(float, grid)), states, "y_space", eps, sched)
