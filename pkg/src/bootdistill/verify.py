"""Oracle checks that can run from a fresh checkout in a few seconds.

Each check returns a :class:`Check` with the measured value and the bound
it is held to.  ``run_checks`` takes an optional replacement for the
Signal-ODE step so that a deliberately broken update can be shown to fail
the equivalence check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensorcore as tc
from .boot import BootConfig, StudentNet, bootstrap_loss, bootstrap_target, boundary_loss, clamp_s, _weights
from .schedule import NoiseSchedule, alpha_sigma, decay_factor, half_log_snr
from .solvers import ddim_sample, euler_signal_ode_step, heun_signal_ode_step, initial_signal, signal_ode_step, time_grid
from .teacher import (
    AnalyticGaussianTeacher,
    DenoiserNet,
    PredictionKind,
    analytic_posterior_mean,
    output_from_signal,
    signal_from_output,
)

__all__ = [
    "Check",
    "relative_error",
    "numeric_grad",
    "check_schedule_identity",
    "check_equivalence",
    "check_orders",
    "convergence_ratios",
    "check_primitive_grads",
    "check_loss_grad",
    "check_stop_gradient",
    "check_kind_roundtrip",
    "check_posterior_quadrature",
    "run_checks",
    "format_report",
]


@dataclass
class Check:
    name: str
    value: float
    bound: tuple[float, float]
    detail: str = ""

    @property
    def passed(self) -> bool:
        lo, hi = self.bound
        return bool(np.isfinite(self.value) and lo <= self.value <= hi)

    def line(self) -> str:
        lo, hi = self.bound
        bound = f"<= {hi:.3g}" if lo == 0.0 else f"in [{lo:.3g}, {hi:.3g}]"
        tag = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return f"{tag}  {self.name:<28} measured={self.value:.3e}  required {bound}{extra}"


def relative_error(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = np.linalg.norm(a) + np.linalg.norm(b)
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


# ---------------------------------------------------------------------------
# schedule and solvers


def check_schedule_identity(sched: NoiseSchedule | None = None, n: int = 100) -> Check:
    """exp(lambda_s - lambda_t) against alpha_t sigma_s / (sigma_t alpha_s) on an n x n grid."""
    sched = sched or NoiseSchedule()
    g = np.linspace(0.01, 0.99, n)
    t, s = np.meshgrid(g, g)
    lhs = np.exp(half_log_snr(sched, s) - half_log_snr(sched, t))
    a_t, s_t = alpha_sigma(sched, t)
    a_s, s_s = alpha_sigma(sched, s)
    rhs = a_t * s_s / (s_t * a_s)
    err = np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(rhs)))
    return Check("schedule identity", float(err), (0.0, 1e-12), f"{n * n} pairs")


def _random_teacher(rng, sched, dim=2, hidden=(32, 32)):
    """Signal-kind MLP with weights jittered away from their initial values."""
    net = DenoiserNet.create(rng, dim, sched, hidden=hidden, time_dim=16, max_freq=20.0)
    for p in net.params.params.values():
        p.data += 0.1 * rng.standard_normal(p.shape)
    return net


def check_equivalence(
    step_fn: Callable | None = None,
    n_teachers: int = 20,
    n_noise: int = 20,
    n_steps: int = 64,
    seed: int = 0,
) -> Check:
    """Max |alpha y + sigma eps - x_DDIM| over every grid point of every trajectory."""
    step_fn = step_fn or signal_ode_step
    sched = NoiseSchedule()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_teachers):
        net = _random_teacher(rng, sched)
        eps = rng.standard_normal((n_noise, net.dim))
        _, rec = ddim_sample(net, eps, n_steps, sched)
        grid = time_grid(sched.t_max, sched.t_min, n_steps)
        y = initial_signal(eps, sched, "consistent")
        for i, (t, s) in enumerate(zip(grid[:-1], grid[1:])):
            y = step_fn(net, y, eps, float(t), float(s), sched)
            a, sg = alpha_sigma(sched, float(s))
            worst = max(worst, float(np.max(np.abs(a * y + sg * eps - rec.states[i + 1]))))
    return Check("ddim/signal-ode equivalence", worst, (0.0, 1e-10), f"{n_teachers} teachers x {n_noise} noises")


def _solve(step, teacher, eps, n, sched, t_hi, t_lo):
    grid = time_grid(t_hi, t_lo, n)
    y = initial_signal(eps, sched, "consistent", t_hi)
    for t, s in zip(grid[:-1], grid[1:]):
        y = step(teacher, y, eps, float(t), float(t - s), sched)
    return y


def convergence_ratios(method: str, ns=(32, 64, 128), ref_factor: int = 64, teacher=None, t_hi=None, t_lo=None):
    """Global error ratios e(n)/e(2n) against a solve with ``ref_factor``x more steps of the same method."""
    sched = NoiseSchedule()
    teacher = teacher or AnalyticGaussianTeacher([0.5, -1.0], [[1.0, 0.3], [0.3, 0.5]], sched)
    t_hi = sched.t_max if t_hi is None else t_hi
    t_lo = sched.t_min if t_lo is None else t_lo
    step = {"euler": euler_signal_ode_step, "heun": heun_signal_ode_step}[method]
    eps = np.random.default_rng(7).standard_normal((50, teacher.dim))
    ref = _solve(step, teacher, eps, ns[0] * ref_factor, sched, t_hi, t_lo)
    errs = np.array([np.max(np.abs(_solve(step, teacher, eps, n, sched, t_hi, t_lo) - ref)) for n in ns])
    return errs[:-1] / errs[1:], errs


def check_orders() -> list[Check]:
    out = []
    for method, bound in (("euler", (1.7, 2.3)), ("heun", (3.3, 4.7))):
        ratios, errs = convergence_ratios(method)
        worst = ratios[np.argmax(np.abs(ratios - np.mean(bound)))]
        out.append(Check(f"{method} order ratio", float(worst), bound, "ratios " + ", ".join(f"{r:.2f}" for r in ratios)))
    return out


# ---------------------------------------------------------------------------
# autodiff


def _primitive_cases(rng):
    A = rng.standard_normal((3, 4))
    B = rng.standard_normal((4, 2))
    C = rng.standard_normal((3, 4))
    r = rng.standard_normal((1, 4))
    pos = rng.uniform(0.5, 2.0, (3, 4))
    return {
        "add": ([A, r], lambda a, b: a + b),
        "sub": ([A, C], lambda a, b: a - b),
        "mul": ([A, r], lambda a, b: a * b),
        "div": ([A, pos], lambda a, b: a / b),
        "neg": ([A], lambda a: -a),
        "pow": ([pos], lambda a: a**1.5),
        "matmul": ([A, B], lambda a, b: a @ b),
        "sum": ([A], lambda a: a.sum(axis=0)),
        "mean": ([A], lambda a: a.mean(axis=1)),
        "reshape": ([A], lambda a: a.reshape(4, 3)),
        "getitem": ([A], lambda a: a[np.array([0, 2, 2])]),
        "transpose": ([A], lambda a: a.T),
        "silu": ([A], tc.silu),
        "exp": ([A], tc.exp),
        "concat": ([A, C], lambda a, b: tc.concat([a, b], axis=1)),
    }


def check_primitive_grads(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []
    for name, (arrays, fn) in _primitive_cases(rng).items():
        arrays = [a.copy() for a in arrays]
        ins = [tc.Tensor(a, requires_grad=True) for a in arrays]
        with tc.Tape() as tape:
            y = fn(*ins)
            w = rng.standard_normal(y.shape)
            loss = (y * w).sum()
        grads = tc.backward(tape, loss)
        worst = 0.0
        for t, a in zip(ins, arrays):

            def f(a=a, t=t):
                with tc.no_grad():
                    return float((fn(*[tc.Tensor(b) for b in arrays]) * w).sum().data)

            worst = max(worst, relative_error(grads[t], numeric_grad(f, a)))
        out.append(Check(f"grad {name}", worst, (0.0, 1e-5)))
    return out


def _small_problem(seed: int = 0, weighting: str = "uniform", solver: str = "euler"):
    sched = NoiseSchedule()
    rng = np.random.default_rng(seed)
    teacher = _random_teacher(rng, sched, hidden=(8, 8))
    student = StudentNet.from_teacher(teacher, sched, time_dim=8, max_freq=10.0)
    for p in student.params.params.values():
        p.data += 0.1 * rng.standard_normal(p.shape)
    cfg = BootConfig(weighting=weighting, target_solver=solver, beta=0.7)
    eps = rng.standard_normal((6, 2))
    t = rng.uniform(cfg.t_min + 1e-3, cfg.t_max, 6)
    return teacher, student, cfg, eps, t


def _total_loss(student, teacher, eps, t, cfg):
    return bootstrap_loss(student, teacher, eps, t, cfg) + cfg.beta * boundary_loss(student, teacher, eps, cfg)


def _frozen_bs(student, eps, t, cfg, target):
    """L_BS with the bootstrap target held fixed at ``target``."""
    s = clamp_s(t, cfg.delta, cfg.t_min)
    h = 1.0 - decay_factor(cfg.sched, t, s)
    d = student.forward(eps, s) - target
    return ((d * d).sum(axis=1) * _weights(cfg, h)).mean()


def _param_fd(student, fn) -> dict[str, np.ndarray]:
    def f():
        with tc.no_grad():
            return float(fn().data)

    return {k: numeric_grad(f, p.data) for k, p in student.params.params.items()}


def _autodiff(student, fn) -> dict[str, np.ndarray]:
    for p in student.params.params.values():
        p.requires_grad = True
    with tc.Tape() as tape:
        loss = fn()
    return student.params.grads(tc.backward(tape, loss))


def _flat(d: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([d[k].ravel() for k in sorted(d)])


def check_loss_grad(seed: int = 0) -> Check:
    """Autodiff gradient of L_BS + beta L_BC vs central differences of the frozen-target loss."""
    teacher, student, cfg, eps, t = _small_problem(seed)
    with tc.no_grad():
        y_t = student.forward(eps, t).data
    target, _ = bootstrap_target(teacher, y_t, eps, t, cfg)
    auto = _autodiff(student, lambda: _total_loss(student, teacher, eps, t, cfg))
    fd = _param_fd(
        student,
        lambda: _frozen_bs(student, eps, t, cfg, target) + cfg.beta * boundary_loss(student, teacher, eps, cfg),
    )
    return Check("grad L_BS + beta L_BC", relative_error(_flat(auto), _flat(fd)), (0.0, 1e-5))


def check_stop_gradient(seed: int = 1) -> list[Check]:
    """The target branch contributes nothing: autodiff equals the frozen-branch derivative.

    The second check confirms the comparison has teeth: differentiating
    through the target branch gives a clearly different vector.
    """
    teacher, student, cfg, eps, t = _small_problem(seed)
    with tc.no_grad():
        y_t = student.forward(eps, t).data
    target, _ = bootstrap_target(teacher, y_t, eps, t, cfg)
    auto = _flat(_autodiff(student, lambda: bootstrap_loss(student, teacher, eps, t, cfg)))
    frozen = _flat(_param_fd(student, lambda: _frozen_bs(student, eps, t, cfg, target)))
    live = _flat(_param_fd(student, lambda: bootstrap_loss(student, teacher, eps, t, cfg)))
    return [
        Check("stop-gradient (frozen fd)", relative_error(auto, frozen), (0.0, 1e-5)),
        Check("stop-gradient (live fd gap)", relative_error(auto, live), (1e-3, np.inf), "must differ"),
    ]


# ---------------------------------------------------------------------------
# teacher oracles


def check_kind_roundtrip(seed: int = 0) -> Check:
    sched = NoiseSchedule()
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal((200, 3))
    t = rng.uniform(sched.t_min, sched.t_max, 200)
    a, s = alpha_sigma(sched, t)
    x_t = a[:, None] * x0 + s[:, None] * rng.standard_normal((200, 3))
    worst = 0.0
    for kind in PredictionKind:
        back = signal_from_output(kind, output_from_signal(kind, x0, x_t, t, sched), x_t, t, sched)
        worst = max(worst, float(np.max(np.abs(back - x0))))
    return Check("kind round trip", worst, (0.0, 1e-12))


def check_posterior_quadrature(mu: float = 1.0, var: float = 4.0, t: float = 0.5) -> Check:
    """Closed-form E[x0 | x_t] against Bayes-rule quadrature on a fine grid."""
    sched = NoiseSchedule()
    teacher = AnalyticGaussianTeacher([mu], [[var]], sched)
    a, s = alpha_sigma(sched, t)
    grid = np.linspace(mu - 12 * np.sqrt(var), mu + 12 * np.sqrt(var), 20001)
    prior = np.exp(-0.5 * (grid - mu) ** 2 / var)
    worst = 0.0
    for x_t in np.linspace(-3, 3, 13):
        like = np.exp(-0.5 * (x_t - a * grid) ** 2 / s**2)
        w = prior * like
        quad = np.trapezoid(grid * w, grid) / np.trapezoid(w, grid)
        exact = analytic_posterior_mean(teacher, np.array([[x_t]]), t, sched)[0, 0]
        worst = max(worst, abs(quad - exact))
    return Check("posterior mean quadrature", worst, (0.0, 1e-8))


def run_checks(step_fn: Callable | None = None, quick: bool = False) -> list[Check]:
    checks = [check_schedule_identity()]
    checks.append(check_equivalence(step_fn, n_teachers=5 if quick else 20))
    checks += check_orders()
    checks += check_primitive_grads()
    checks.append(check_loss_grad())
    checks += check_stop_gradient()
    checks.append(check_kind_roundtrip())
    checks.append(check_posterior_quadrature())
    return checks


def format_report(checks: list[Check]) -> str:
    n_pass = sum(c.passed for c in checks)
    lines = [c.line() for c in checks]
    lines.append(f"{n_pass}/{len(checks)} checks passed")
    return "\n".join(lines) + "\n"
