"""Variance-preserving cosine noise schedule and its log-SNR algebra."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NoiseSchedule",
    "alpha_sigma",
    "half_log_snr",
    "lambda_prime",
    "lambda_prime_discrete",
    "decay_factor",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """alpha_t = cos(pi t / 2), sigma_t = sin(pi t / 2), learned on [t_min, t_max]."""

    kind: str = "cosine"
    t_min: float = 0.02
    t_max: float = 0.98

    def __post_init__(self):
        if self.kind != "cosine":
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 0.0 < self.t_min < self.t_max < 1.0:
            raise ValueError(f"need 0 < t_min < t_max < 1, got ({self.t_min}, {self.t_max})")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "t_min": self.t_min, "t_max": self.t_max}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        unknown = set(d) - {"kind", "t_min", "t_max"}
        if unknown:
            raise ValueError(f"unknown schedule keys {sorted(unknown)}")
        return cls(**d)

    # convenience forwarding
    def alpha_sigma(self, t):
        return alpha_sigma(self, t)

    def half_log_snr(self, t):
        return half_log_snr(self, t)

    def lambda_prime(self, t):
        return lambda_prime(self, t)


def _check(t, lo: float, hi: float, closed: bool, what: str):
    t = np.asarray(t, dtype=np.float64)
    bad = (t < lo) | (t > hi) if closed else (t <= lo) | (t >= hi)
    if np.any(bad) or np.any(np.isnan(t)):
        bracket = "[]" if closed else "()"
        raise ValueError(f"{what}: t={t[bad] if t.ndim else t} outside {bracket[0]}{lo}, {hi}{bracket[1]}")
    return t


def _out(t_in, value):
    return float(value) if np.ndim(t_in) == 0 else value


def alpha_sigma(sched: NoiseSchedule, t):
    """Return (alpha_t, sigma_t); scalar in, scalars out."""
    tt = _check(t, 0.0, 1.0, True, "alpha_sigma")
    a = np.cos(0.5 * np.pi * tt)
    s = np.sin(0.5 * np.pi * tt)
    return _out(t, a), _out(t, s)


def half_log_snr(sched: NoiseSchedule, t):
    """lambda_t = -log(alpha_t / sigma_t), increasing in t; infinite at 0 and 1."""
    tt = _check(t, 0.0, 1.0, False, "half_log_snr")
    return _out(t, np.log(np.tan(0.5 * np.pi * tt)))


def lambda_prime(sched: NoiseSchedule, t):
    """d lambda / dt = pi / sin(pi t)."""
    tt = _check(t, 0.0, 1.0, False, "lambda_prime")
    return _out(t, np.pi / np.sin(np.pi * tt))


def decay_factor(sched: NoiseSchedule, t, s):
    """exp(lambda_s - lambda_t) = alpha_t sigma_s / (sigma_t alpha_s).

    Computed from the ratio form, which stays accurate when s is close to t.
    """
    a_t, s_t = alpha_sigma(sched, t)
    a_s, s_s = alpha_sigma(sched, s)
    return a_t * s_s / (s_t * a_s)


def lambda_prime_discrete(sched: NoiseSchedule, t, delta):
    """(1 - alpha_t sigma_s / (sigma_t alpha_s)) / delta with s = t - delta."""
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta <= 0):
        raise ValueError("delta must be positive")
    s = np.asarray(t, dtype=np.float64) - delta
    if np.any(s < 0):
        raise ValueError(f"s = t - delta = {s} is below 0")
    _check(t, 0.0, 1.0, False, "lambda_prime_discrete")
    out = (1.0 - decay_factor(sched, t, s)) / delta
    return float(out) if np.ndim(out) == 0 else out
