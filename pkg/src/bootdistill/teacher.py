"""Desk-scale diffusion teachers.

Two kinds of teacher share one calling convention,
``teacher.predict_signal(x_t, t, cond) -> ndarray``:

* :class:`DenoiserNet` -- a SiLU MLP trained with :func:`train_teacher`;
* :class:`AnalyticGaussianTeacher` -- the exact posterior mean for Gaussian
  data, used as an oracle throughout the test-suite.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .schedule import NoiseSchedule, alpha_sigma
from .tensorcore import (
    ParamSet,
    Tape,
    Tensor,
    adamw_step,
    backward,
    forward_mlp,
    init_mlp,
    no_grad,
)

log = logging.getLogger(__name__)

__all__ = [
    "PredictionKind",
    "NFECounter",
    "time_features",
    "DenoiserNet",
    "AnalyticGaussianTeacher",
    "predict_signal",
    "signal_from_output",
    "output_from_signal",
    "analytic_posterior_mean",
    "teacher_batch_loss",
    "train_teacher",
]


class PredictionKind(str, enum.Enum):
    SIGNAL = "signal"
    NOISE = "noise"
    V = "v"


@dataclass
class NFECounter:
    """Counts network passes: ``calls`` per batch, ``nfe`` per sample."""

    calls: int = 0
    nfe: int = 0

    def add(self, n_samples: int, passes: int = 1) -> None:
        self.calls += passes
        self.nfe += n_samples * passes

    def reset(self) -> None:
        self.calls = 0
        self.nfe = 0


def time_features(t, n: int, dim: int = 64, max_freq: float = 100.0) -> np.ndarray:
    """Sinusoidal features of a scalar or per-sample time, shape ``(n, dim)``."""
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    freqs = np.geomspace(1.0, max_freq, dim // 2)
    arg = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def _broadcast_t(t, n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(t, dtype=np.float64), (n,)).copy()


def _col(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v[:, None] if v.ndim == 1 else v


def signal_from_output(kind: PredictionKind, out, x_t, t, sched: NoiseSchedule):
    """Convert a network output of the given kind into a signal estimate."""
    kind = PredictionKind(kind)
    if kind is PredictionKind.SIGNAL:
        return out
    a, s = alpha_sigma(sched, _broadcast_t(t, len(x_t)))
    a, s = _col(a), _col(s)
    if kind is PredictionKind.NOISE:
        if np.any(a < 1e-12):
            raise FloatingPointError("alpha_t below 1e-12: noise prediction cannot be converted to signal")
        return (x_t - s * out) / a
    return a * x_t - s * out


def output_from_signal(kind: PredictionKind, x0, x_t, t, sched: NoiseSchedule):
    """Inverse of :func:`signal_from_output` at fixed ``(x_t, t)``."""
    kind = PredictionKind(kind)
    if kind is PredictionKind.SIGNAL:
        return x0
    a, s = alpha_sigma(sched, _broadcast_t(t, len(x_t)))
    a, s = _col(a), _col(s)
    eps = (x_t - a * x0) / s
    if kind is PredictionKind.NOISE:
        return eps
    return a * eps - s * x0


class DenoiserNet:
    """Time- and class-conditioned MLP denoiser.

    Class labels ``0..n_classes-1`` are real conditions; label ``n_classes`` is
    the null condition used for classifier-free guidance.
    """

    def __init__(
        self,
        params: ParamSet,
        kind: PredictionKind,
        dim: int,
        n_classes: int,
        sched: NoiseSchedule,
        time_dim: int = 64,
        max_freq: float = 100.0,
    ):
        self.params = params
        self.kind = PredictionKind(kind)
        self.dim = dim
        self.n_classes = n_classes
        self.sched = sched
        self.time_dim = time_dim
        self.max_freq = max_freq
        self.counter = NFECounter()

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        dim: int,
        sched: NoiseSchedule,
        hidden=(128, 128, 128),
        kind: PredictionKind = PredictionKind.SIGNAL,
        n_classes: int = 0,
        time_dim: int = 64,
        max_freq: float = 100.0,
    ) -> "DenoiserNet":
        embed_dims = [time_dim] + ([n_classes + 1] if n_classes else [])
        params = init_mlp(rng, dim, hidden, dim, embed_dims)
        return cls(params, kind, dim, n_classes, sched, time_dim, max_freq)

    @property
    def conditional(self) -> bool:
        return self.n_classes > 0

    def labels(self, cond, n: int) -> np.ndarray | None:
        if not self.conditional:
            if cond is not None:
                raise ValueError("conditional query on an unconditional teacher")
            return None
        if cond is None:
            return np.full(n, self.n_classes)
        labels = np.broadcast_to(np.asarray(cond, dtype=int), (n,))
        if np.any((labels < 0) | (labels > self.n_classes)):
            raise ValueError(f"condition labels must lie in [0, {self.n_classes}]")
        return labels

    def embeddings(self, t, cond, n: int) -> list[np.ndarray]:
        embs = [time_features(t, n, self.time_dim, self.max_freq)]
        labels = self.labels(cond, n)
        if labels is not None:
            embs.append(np.eye(self.n_classes + 1)[labels])
        return embs

    def forward(self, x, t, cond=None, params: ParamSet | None = None) -> Tensor:
        """Raw network output in this net's own parameterisation."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        n = x.shape[0]
        self.counter.add(n)
        return forward_mlp(params or self.params, x, self.embeddings(t, cond, n))

    def predict_signal(self, x_t, t, cond=None) -> np.ndarray:
        x_t = np.asarray(x_t, dtype=np.float64)
        with no_grad():
            out = self.forward(x_t, t, cond).data
        return signal_from_output(self.kind, out, x_t, t, self.sched)

    def meta(self) -> dict:
        return {
            "model": "denoiser",
            "kind": self.kind.value,
            "dim": self.dim,
            "n_classes": self.n_classes,
            "time_dim": self.time_dim,
            "max_freq": self.max_freq,
            "schedule": self.sched.to_dict(),
        }

    @classmethod
    def from_meta(cls, params: ParamSet, meta: dict) -> "DenoiserNet":
        return cls(
            params,
            meta["kind"],
            meta["dim"],
            meta["n_classes"],
            NoiseSchedule.from_dict(meta["schedule"]),
            meta["time_dim"],
            meta["max_freq"],
        )


def predict_signal(net, x_t, t, condition=None) -> np.ndarray:
    """Signal-space estimate E[x_0 | x_t] from any teacher."""
    return net.predict_signal(x_t, t, condition)


@dataclass
class AnalyticGaussianTeacher:
    """Exact denoiser for data ~ N(mean, cov)."""

    mean: np.ndarray
    cov: np.ndarray
    sched: NoiseSchedule = field(default_factory=NoiseSchedule)
    counter: NFECounter = field(default_factory=NFECounter)
    kind: PredictionKind = PredictionKind.SIGNAL
    n_classes: int = 0

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.asarray(self.cov, dtype=np.float64)
        if cov.ndim < 2:
            cov = np.diag(np.broadcast_to(np.atleast_1d(cov), self.mean.shape))
        if not np.allclose(cov, cov.T):
            raise ValueError("covariance must be symmetric")
        self.cov = cov
        self._evals, self._evecs = np.linalg.eigh(cov)
        if np.any(self._evals <= 0):
            raise ValueError("covariance must be positive definite")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def conditional(self) -> bool:
        return False

    def predict_signal(self, x_t, t, cond=None) -> np.ndarray:
        if cond is not None:
            raise ValueError("conditional query on an unconditional teacher")
        x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
        self.counter.add(len(x_t))
        return analytic_posterior_mean(self, x_t, t, self.sched)

    def sample(self, rng: np.random.Generator, n: int):
        z = rng.standard_normal((n, self.dim))
        return self.mean + (z * np.sqrt(self._evals)) @ self._evecs.T, None

    def flow_map(self, x, t_from: float, t_to: float) -> np.ndarray:
        """Exact probability-flow ODE transport of ``x`` from ``t_from`` to ``t_to``."""
        a0, s0 = alpha_sigma(self.sched, t_from)
        a1, s1 = alpha_sigma(self.sched, t_to)
        scale = np.sqrt(a1**2 * self._evals + s1**2) / np.sqrt(a0**2 * self._evals + s0**2)
        z = (np.atleast_2d(x) - a0 * self.mean) @ self._evecs
        return a1 * self.mean + (z * scale) @ self._evecs.T


def analytic_posterior_mean(teacher: AnalyticGaussianTeacher, x_t, t, sched: NoiseSchedule) -> np.ndarray:
    """mu + a S (a^2 S + s^2 I)^-1 (x_t - a mu), per sample if ``t`` is an array."""
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    n = len(x_t)
    a, s = alpha_sigma(sched, _broadcast_t(t, n))
    a, s = _col(a), _col(s)
    lam, U = teacher._evals, teacher._evecs
    denom = a**2 * lam[None, :] + s**2
    if np.any(denom <= 0):
        raise np.linalg.LinAlgError("singular posterior covariance")
    z = (x_t - a * teacher.mean) @ U
    return teacher.mean + (a * lam[None, :] / denom * z) @ U.T


def teacher_batch_loss(net, x0, t, eps, labels=None) -> Tensor:
    """Mean squared denoising error in the net's own parameterisation."""
    sched = net.sched
    a, s = alpha_sigma(sched, t)
    a, s = _col(a), _col(s)
    x_t = a * x0 + s * eps
    target = output_from_signal(net.kind, x0, x_t, t, sched)
    out = net.forward(x_t, t, labels)
    diff = out - target
    return (diff * diff).sum(axis=1).mean()


def train_teacher(
    sampler: Callable,
    net: DenoiserNet,
    sched: NoiseSchedule,
    steps: int,
    lr: float = 1e-3,
    uncond_prob: float = 0.2,
    batch: int = 256,
    rng: np.random.Generator | None = None,
    weight_decay: float = 0.0,
    callback: Callable[[int, float], None] | None = None,
) -> DenoiserNet:
    """Fit ``net`` to data from ``sampler(rng, n) -> (x, labels)``.

    Times are uniform on ``[t_min, t_max]``; with a conditional net each label
    is replaced by the null condition with probability ``uncond_prob``.
    Raises ``FloatingPointError`` with the step index on a non-finite loss.
    """
    if not 0.0 <= uncond_prob <= 1.0:
        raise ValueError("uncond_prob must lie in [0, 1]")
    rng = rng if rng is not None else np.random.default_rng(0)
    for step in range(steps):
        x0, labels = sampler(rng, batch)
        if x0.shape[1] != net.dim:
            raise ValueError(f"data dimension {x0.shape[1]} != net dimension {net.dim}")
        eps = rng.standard_normal(x0.shape)
        t = rng.uniform(sched.t_min, sched.t_max, batch)
        if net.conditional:
            if labels is None:
                labels = np.full(batch, net.n_classes)
            drop = rng.random(batch) < uncond_prob
            labels = np.where(drop, net.n_classes, labels)
        with Tape() as tape:
            loss = teacher_batch_loss(net, x0, t, eps, labels if net.conditional else None)
        value = float(loss.data)
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite teacher loss at step {step}")
        grads = net.params.grads(backward(tape, loss))
        adamw_step(net.params, grads, lr, weight_decay)
        if callback is not None:
            callback(step, value)
    return net
