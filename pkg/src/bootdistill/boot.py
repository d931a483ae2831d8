"""Data-free single-step distillation by bootstrapping along the Signal-ODE.

The student ``y_theta(eps, t, c, w)`` predicts the signal component of the
teacher's deterministic trajectory started from noise ``eps``.  Training
only ever draws fresh noise: the regression target at ``s = t - delta`` is
built from the student's own (stop-gradient) output at ``t`` plus one
teacher step, and a boundary term pins ``y_theta(eps, t_max)`` to the
teacher's first denoising output.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np

from .guidance import GuidanceSpec, cfg_combine
from .schedule import NoiseSchedule, alpha_sigma, decay_factor, half_log_snr
from .teacher import DenoiserNet, NFECounter, PredictionKind, time_features
from .tensorcore import (
    ParamSet,
    Tape,
    Tensor,
    adamw_step,
    backward,
    concat,
    ema_update,
    forward_mlp,
    no_grad,
    stop_gradient,
)

log = logging.getLogger(__name__)

__all__ = [
    "BootConfig",
    "StudentNet",
    "LinearStudent",
    "GuidanceSpec",
    "cfg_combine",
    "clamp_s",
    "bootstrap_target",
    "bootstrap_loss",
    "boundary_loss",
    "Distiller",
    "distill",
    "sample_student",
    "student_from_meta",
]


@dataclass
class BootConfig:
    delta: float = 0.04
    beta: float = 1.0
    t_min: float = 0.02
    t_max: float = 0.98
    weighting: str = "uniform"
    time_sampling: str = "uniform"
    target_solver: str = "euler"
    boundary_period: int = 4
    clip: float | None = None
    ema_decay: float = 0.9999
    lr: float = 1e-4
    batch: int = 128
    steps: int = 1000
    weight_decay: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.delta < self.t_max - self.t_min:
            raise ValueError(f"delta must lie in (0, t_max - t_min), got {self.delta}")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.boundary_period < 1:
            raise ValueError("boundary_period must be >= 1")
        if self.weighting not in ("uniform", "inv_lambda_prime_sq"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.time_sampling not in ("uniform", "progressive"):
            raise ValueError(f"unknown time_sampling {self.time_sampling!r}")
        if self.target_solver not in ("euler", "heun"):
            raise ValueError(f"unknown target_solver {self.target_solver!r}")
        if self.steps < 0 or self.batch < 1:
            raise ValueError("steps must be >= 0 and batch >= 1")

    @property
    def sched(self) -> NoiseSchedule:
        return NoiseSchedule("cosine", self.t_min, self.t_max)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BootConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown BootConfig keys {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# students


class StudentNet:
    """MLP student initialised from a :class:`DenoiserNet` teacher.

    The teacher body is reused with its own time input frozen at ``t_max``;
    the target time ``t`` (and optionally the guidance weight ``w``) enter
    through new zero-initialised embeddings, so at initialisation
    ``y_theta(eps, t)`` equals the teacher-derived boundary form for every t:
    ``NN_x(eps)``, ``eps - NN_eps(eps)`` or ``-NN_v(eps)``.
    """

    def __init__(
        self,
        params: ParamSet,
        adaptor: PredictionKind,
        dim: int,
        n_classes: int,
        sched: NoiseSchedule,
        teacher_time_dim: int = 64,
        teacher_max_freq: float = 100.0,
        time_dim: int = 64,
        max_freq: float = 50.0,
        w_conditioned: bool = False,
        w_scale: float = 0.1,
    ):
        self.params = params
        self.adaptor = PredictionKind(adaptor)
        self.dim = dim
        self.n_classes = n_classes
        self.sched = sched
        self.teacher_time_dim = teacher_time_dim
        self.teacher_max_freq = teacher_max_freq
        self.time_dim = time_dim
        self.max_freq = max_freq
        self.w_conditioned = w_conditioned
        self.w_scale = w_scale
        self.counter = NFECounter()

    @classmethod
    def from_teacher(
        cls,
        teacher: DenoiserNet,
        sched: NoiseSchedule | None = None,
        w_conditioned: bool = False,
        time_dim: int = 64,
        max_freq: float = 50.0,
    ) -> "StudentNet":
        ps = teacher.params.copy()
        ps.step = 0
        for name in ps.names():
            ps.m[name][...] = 0.0
            ps.v[name][...] = 0.0
        first = ps["in.W"].shape[1]
        n_emb = sum(1 for layer in ps.layer_plan if layer["name"].startswith("emb"))
        ps.add(f"emb{n_emb}.W", np.zeros((time_dim, first)), {"name": f"emb{n_emb}", "in": time_dim, "out": first, "bias": False})
        if w_conditioned:
            k = n_emb + 1
            ps.add(f"emb{k}.W", np.zeros((time_dim, first)), {"name": f"emb{k}", "in": time_dim, "out": first, "bias": False})
        ps.shadow = {k: p.data.copy() for k, p in ps.params.items()}
        return cls(
            ps,
            teacher.kind,
            teacher.dim,
            teacher.n_classes,
            sched or teacher.sched,
            teacher.time_dim,
            teacher.max_freq,
            time_dim,
            max_freq,
            w_conditioned,
        )

    @property
    def conditional(self) -> bool:
        return self.n_classes > 0

    def forward(self, eps, t, cond=None, w=None, params: ParamSet | None = None) -> Tensor:
        eps_t = eps if isinstance(eps, Tensor) else Tensor(eps)
        n = eps_t.shape[0]
        self.counter.add(n)
        embs = [time_features(self.sched.t_max, n, self.teacher_time_dim, self.teacher_max_freq)]
        if self.conditional:
            labels = np.full(n, self.n_classes) if cond is None else np.broadcast_to(np.asarray(cond, dtype=int), (n,))
            embs.append(np.eye(self.n_classes + 1)[labels])
        elif cond is not None:
            raise ValueError("condition passed to an unconditional student")
        embs.append(time_features(t, n, self.time_dim, self.max_freq))
        if self.w_conditioned:
            embs.append(time_features(self.w_scale * np.asarray(1.0 if w is None else w, dtype=np.float64), n, self.time_dim, self.max_freq))
        out = forward_mlp(params or self.params, eps_t, embs)
        if self.adaptor is PredictionKind.SIGNAL:
            return out
        if self.adaptor is PredictionKind.NOISE:
            return eps_t - out
        return -out

    def sample(self, eps, t, cond=None, w=None) -> np.ndarray:
        with no_grad():
            return self.forward(np.asarray(eps, dtype=np.float64), t, cond, w).data

    def with_params(self, params: ParamSet) -> "StudentNet":
        return StudentNet(
            params,
            self.adaptor,
            self.dim,
            self.n_classes,
            self.sched,
            self.teacher_time_dim,
            self.teacher_max_freq,
            self.time_dim,
            self.max_freq,
            self.w_conditioned,
            self.w_scale,
        )

    def meta(self) -> dict:
        return {
            "model": "student",
            "adaptor": self.adaptor.value,
            "dim": self.dim,
            "n_classes": self.n_classes,
            "schedule": self.sched.to_dict(),
            "teacher_time_dim": self.teacher_time_dim,
            "teacher_max_freq": self.teacher_max_freq,
            "time_dim": self.time_dim,
            "max_freq": self.max_freq,
            "w_conditioned": self.w_conditioned,
            "w_scale": self.w_scale,
        }


class LinearStudent:
    """Student that is affine in the noise: y = gain(t) * eps + offset(t).

    ``gain`` and ``offset`` are per-coordinate linear functions of Chebyshev
    polynomials of the rescaled time, so the model is linear in its
    parameters.  Exact for teachers of Gaussian data with diagonal covariance.
    """

    n_classes = 0
    conditional = False
    w_conditioned = False

    def __init__(self, params: ParamSet, dim: int, sched: NoiseSchedule, degree: int = 16):
        self.params = params
        self.dim = dim
        self.sched = sched
        self.degree = degree
        self.counter = NFECounter()

    @classmethod
    def from_teacher(cls, teacher, sched: NoiseSchedule | None = None, degree: int = 16):
        """Start from the affine fit of ``f(eps, t_max)`` probed at 0 and unit vectors."""
        sched = sched or teacher.sched
        d = teacher.dim
        probes = np.vstack([np.zeros(d), np.eye(d)])
        f = teacher.predict_signal(probes, sched.t_max)
        offset = f[0]
        gain = np.diag(f[1:] - offset)
        ps = ParamSet({}, layer_plan=[])
        ps.add("gain.W", np.zeros((degree, d)), {"name": "gain", "in": degree, "out": d, "bias": True})
        ps.add("gain.b", gain.copy())
        ps.add("offset.W", np.zeros((degree, d)), {"name": "offset", "in": degree, "out": d, "bias": True})
        ps.add("offset.b", offset.copy())
        return cls(ps, d, sched, degree)

    def features(self, t, n):
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        u = 2.0 * (t - self.sched.t_min) / (self.sched.t_max - self.sched.t_min) - 1.0
        return np.polynomial.chebyshev.chebvander(u, self.degree)[:, 1:]

    def forward(self, eps, t, cond=None, w=None, params: ParamSet | None = None) -> Tensor:
        if cond is not None:
            raise ValueError("condition passed to an unconditional student")
        ps = params or self.params
        eps = np.asarray(eps.data if isinstance(eps, Tensor) else eps, dtype=np.float64)
        n = len(eps)
        self.counter.add(n)
        phi = Tensor(self.features(t, n))
        gain = phi @ ps["gain.W"] + ps["gain.b"]
        offset = phi @ ps["offset.W"] + ps["offset.b"]
        return gain * eps + offset

    def sample(self, eps, t, cond=None, w=None) -> np.ndarray:
        with no_grad():
            return self.forward(eps, t, cond, w).data

    def with_params(self, params: ParamSet) -> "LinearStudent":
        return LinearStudent(params, self.dim, self.sched, self.degree)

    def meta(self) -> dict:
        return {
            "model": "linear_student",
            "dim": self.dim,
            "schedule": self.sched.to_dict(),
            "degree": self.degree,
        }


def student_from_meta(params: ParamSet, meta: dict):
    sched = NoiseSchedule.from_dict(meta["schedule"])
    if meta["model"] == "linear_student":
        return LinearStudent(params, meta["dim"], sched, meta["degree"])
    if meta["model"] != "student":
        raise ValueError(f"checkpoint holds a {meta['model']!r}, not a student")
    return StudentNet(
        params,
        meta["adaptor"],
        meta["dim"],
        meta["n_classes"],
        sched,
        meta["teacher_time_dim"],
        meta["teacher_max_freq"],
        meta["time_dim"],
        meta["max_freq"],
        meta["w_conditioned"],
        meta["w_scale"],
    )


# ---------------------------------------------------------------------------
# losses


def clamp_s(t, delta: float, t_min: float) -> np.ndarray:
    """s = max(t - delta, t_min); requires every t > t_min so that s < t."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= t_min):
        raise ValueError(f"bootstrap times must exceed t_min={t_min}")
    return np.maximum(t - delta, t_min)


def _col(v):
    v = np.asarray(v, dtype=np.float64)
    return v[:, None] if v.ndim == 1 else v


def _guided(spec: GuidanceSpec | None, cond, w):
    if cond is None and w is None:
        return spec
    spec = spec or GuidanceSpec()
    kw = {}
    if cond is not None:
        kw["condition"] = cond
    if w is not None:
        kw["weight"] = w
    return spec.with_(**kw)


def bootstrap_target(
    teacher,
    y_t,
    eps,
    t,
    cfg: BootConfig,
    spec: GuidanceSpec | None = None,
    s=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Stop-gradient regression target at ``s`` and the step factor delta*lambda'_t.

    Euler: ``y_t + h (f(x_t, t) - y_t)`` with ``h = 1 - alpha_t sigma_s /
    (sigma_t alpha_s)``, which is exactly one DDIM step.  Heun: a
    predictor-corrector step in log-SNR time using a second teacher call at s.
    """
    sched = cfg.sched
    y_t = np.asarray(y_t.data if isinstance(y_t, Tensor) else y_t, dtype=np.float64)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (len(y_t),))
    s = clamp_s(t, cfg.delta, cfg.t_min) if s is None else np.asarray(s, dtype=np.float64)
    a_t, s_t = alpha_sigma(sched, t)
    h_disc = 1.0 - decay_factor(sched, t, s)
    x_hat = _col(a_t) * y_t + _col(s_t) * eps
    k1 = cfg_combine(teacher, x_hat, t, spec, cfg.clip) - y_t
    if cfg.target_solver == "euler":
        target = y_t + _col(h_disc) * k1
    else:
        h = _col(half_log_snr(sched, t) - half_log_snr(sched, s))
        y_pred = y_t + h * k1
        a_s, s_s = alpha_sigma(sched, s)
        x_pred = _col(a_s) * y_pred + _col(s_s) * eps
        k2 = cfg_combine(teacher, x_pred, s, spec, cfg.clip) - y_pred
        target = y_t + 0.5 * h * (k1 + k2)
    return target, h_disc


def _weights(cfg: BootConfig, h_disc: np.ndarray) -> np.ndarray:
    if cfg.weighting == "inv_lambda_prime_sq":
        return 1.0 / h_disc**2
    return np.full_like(h_disc, 1.0 / cfg.delta**2)


def _weighted_sq(diff: Tensor, weights=None) -> Tensor:
    per_sample = (diff * diff).sum(axis=1)
    if weights is not None:
        per_sample = per_sample * weights
    return per_sample.mean()


def bootstrap_loss(
    student,
    teacher,
    eps,
    t,
    cfg: BootConfig,
    spec: GuidanceSpec | None = None,
    cond=None,
    w=None,
    params: ParamSet | None = None,
) -> Tensor:
    """Weighted mean of ||y_theta(eps, s) - SG(target)||^2; call inside a Tape."""
    eps = np.asarray(eps, dtype=np.float64)
    n = len(eps)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    s = clamp_s(t, cfg.delta, cfg.t_min)
    cond2 = None if cond is None else np.concatenate([np.broadcast_to(cond, (n,))] * 2)
    w2 = None if w is None else np.concatenate([np.broadcast_to(w, (n,))] * 2)
    y = student.forward(np.concatenate([eps, eps]), np.concatenate([t, s]), cond2, w2, params=params)
    y_t = stop_gradient(y[:n])
    y_s = y[n:]
    target, h_disc = bootstrap_target(teacher, y_t.data, eps, t, cfg, _guided(spec, cond, w), s=s)
    loss = _weighted_sq(y_s - target, _weights(cfg, h_disc))
    if not np.isfinite(loss.data):
        bad = t[~np.isfinite(((y_s.data - target) ** 2).sum(axis=1))]
        raise FloatingPointError(f"non-finite bootstrap loss at t={bad}")
    return loss


def boundary_loss(
    student,
    teacher,
    eps,
    cfg: BootConfig,
    spec: GuidanceSpec | None = None,
    cond=None,
    w=None,
    params: ParamSet | None = None,
) -> Tensor:
    """Mean ||f~(eps, t_max) - y_theta(eps, t_max)||^2; call inside a Tape."""
    eps = np.asarray(eps, dtype=np.float64)
    target = cfg_combine(teacher, eps, cfg.t_max, _guided(spec, cond, w), cfg.clip)
    y = student.forward(eps, np.full(len(eps), cfg.t_max), cond, w, params=params)
    return _weighted_sq(y - target)


# ---------------------------------------------------------------------------
# training loop


class Distiller:
    """Stateful training loop; ``state_dict``/``from_state`` allow bit-exact resume.

    Per step the single RNG stream is consumed in the order: noise, context
    labels, guidance weights, times.
    """

    def __init__(
        self,
        teacher,
        student,
        cfg: BootConfig,
        spec: GuidanceSpec | None = None,
        context_sampler: Callable | None = None,
        rng: np.random.Generator | None = None,
        step: int = 0,
    ):
        self.teacher = teacher
        self.student = student
        self.cfg = cfg
        self.spec = spec
        self.context_sampler = context_sampler
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.step = step
        self.history: list[dict] = []
        student.params.ema_decay = cfg.ema_decay
        if student.w_conditioned and (spec is None or spec.weight_range is None):
            raise ValueError("a w-conditioned student needs spec.weight_range")

    def _sample_times(self, n: int) -> np.ndarray:
        cfg = self.cfg
        span = cfg.t_max - cfg.t_min
        u = self.rng.random(n)
        if cfg.time_sampling == "progressive":
            progress = (self.step + 1) / max(cfg.steps, 1)
            span = span * min(progress, 1.0)
        return cfg.t_max - u * span

    def _sample_context(self, n: int):
        cond = None
        if self.student.conditional:
            if self.context_sampler is not None:
                cond = np.asarray(self.context_sampler(self.rng, n), dtype=int)
            elif self.spec is not None and self.spec.condition is not None:
                cond = np.broadcast_to(np.asarray(self.spec.condition, dtype=int), (n,))
            else:
                cond = self.rng.integers(0, self.student.n_classes, n)
        w = None
        if self.student.w_conditioned:
            lo, hi = self.spec.weight_range
            w = self.rng.uniform(lo, hi, n)
        elif self.spec is not None and cond is not None:
            w = np.broadcast_to(np.asarray(self.spec.weight, dtype=np.float64), (n,))
        return cond, w

    def train_step(self) -> dict:
        cfg = self.cfg
        start = time.perf_counter()
        eps = self.rng.standard_normal((cfg.batch, self.student.dim))
        cond, w = self._sample_context(cfg.batch)
        t = self._sample_times(cfg.batch)
        with_boundary = cfg.beta > 0 and self.step % cfg.boundary_period == 0
        with Tape() as tape:
            loss_bs = bootstrap_loss(self.student, self.teacher, eps, t, cfg, self.spec, cond, w)
            total = loss_bs
            loss_bc = None
            if with_boundary:
                loss_bc = boundary_loss(self.student, self.teacher, eps, cfg, self.spec, cond, w)
                total = total + cfg.beta * loss_bc
        value = float(total.data)
        if not np.isfinite(value) or value > 1e6:
            raise FloatingPointError(
                f"distillation diverged at step {self.step}: loss={value:.3e}, t range [{t.min():.3f}, {t.max():.3f}]"
            )
        grads = self.student.params.grads(backward(tape, total))
        adamw_step(self.student.params, grads, cfg.lr, cfg.weight_decay)
        ema_update(self.student.params, cfg.ema_decay)
        row = {
            "step": self.step,
            "loss_bs": float(loss_bs.data),
            "loss_bc": 0.0 if loss_bc is None else float(loss_bc.data),
            "ema_decay": cfg.ema_decay,
            "wall_ms": (time.perf_counter() - start) * 1e3,
        }
        self.step += 1
        return row

    def run(self, n_steps: int | None = None, callback: Callable[[dict], None] | None = None):
        n_steps = self.cfg.steps - self.step if n_steps is None else n_steps
        for _ in range(n_steps):
            row = self.train_step()
            if callback is not None:
                callback(row)
            if row["step"] % 1000 == 0:
                log.debug("step %d loss_bs %.4g loss_bc %.4g", row["step"], row["loss_bs"], row["loss_bc"])
        return self

    def ema_student(self):
        return self.student.with_params(self.student.params.ema_view())


def distill(
    teacher,
    student,
    cfg: BootConfig,
    spec: GuidanceSpec | None = None,
    context_sampler: Callable | None = None,
    rng: np.random.Generator | None = None,
    callback: Callable[[dict], None] | None = None,
):
    """Run ``cfg.steps`` bootstrap updates and return the EMA student."""
    d = Distiller(teacher, student, cfg, spec, context_sampler, rng)
    d.run(callback=callback)
    return d.ema_student()


def sample_student(student, eps, t_target=None, spec: GuidanceSpec | None = None) -> np.ndarray:
    """One student evaluation; ``t_target`` defaults to ``t_min`` (the final sample)."""
    sched = student.sched
    t_target = sched.t_min if t_target is None else t_target
    if np.any(np.asarray(t_target) < sched.t_min) or np.any(np.asarray(t_target) > sched.t_max):
        raise ValueError(f"t_target must lie in [{sched.t_min}, {sched.t_max}]")
    cond = None if spec is None else spec.condition
    w = None
    if student.w_conditioned:
        w = 1.0 if spec is None else spec.weight
        n = len(eps)
        w = np.broadcast_to(np.asarray(w, dtype=np.float64), (n,))
    return student.sample(eps, t_target, cond, w)
