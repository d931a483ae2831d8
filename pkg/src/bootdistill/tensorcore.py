"""Small reverse-mode autodiff over float64 numpy arrays.

Everything the distillation code differentiates goes through :class:`Tensor`
and the primitives below.  Operations are recorded on the innermost active
:class:`Tape`; :func:`backward` replays that tape in reverse.

    >>> with Tape() as tape:
    ...     x = Tensor(np.ones(3), requires_grad=True)
    ...     loss = (x * x).sum()
    >>> grads = backward(tape, loss)
    >>> grads[x]
    array([2., 2., 2.])
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "Tape",
    "Gradients",
    "DimensionError",
    "backward",
    "no_grad",
    "stop_gradient",
    "as_tensor",
    "matmul",
    "silu",
    "exp",
    "concat",
    "ParamSet",
    "init_mlp",
    "forward_mlp",
    "adamw_step",
    "ema_update",
    "save_checkpoint",
    "load_checkpoint",
]


class DimensionError(ValueError):
    """Raised when tensor shapes do not fit a layer or an operation."""


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; nested tapes record only into the innermost one.
    """

    def __init__(self, recording: bool = True) -> None:
        self.recording = recording
        self.entries: list[tuple["Tensor", tuple["Tensor", ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.entries)


def _recording() -> Tape | None:
    if _TAPES and _TAPES[-1].recording:
        return _TAPES[-1]
    return None


def no_grad() -> Tape:
    """Context in which operations are evaluated without being recorded."""
    return Tape(recording=False)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array that can take part in reverse-mode differentiation."""

    __array_priority__ = 100
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.name = None
        return t

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return _binary(self, other, np.add, lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, np.subtract, lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        return _binary(self, other, np.multiply, lambda g, a, b: g * b, lambda g, a, b: g * a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(
            self,
            other,
            np.divide,
            lambda g, a, b: g / b,
            lambda g, a, b: -g * a / (b * b),
        )

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        return _unary(self, -self.data, lambda g: -g)

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        p = float(exponent)
        x = self.data
        return _unary(self, x**p, lambda g: g * p * x ** (p - 1))

    def __matmul__(self, other):
        return matmul(self, other)

    # reductions and reshaping -------------------------------------------
    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False):
        x_shape = self.shape
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, x_shape)

        return _unary(self, out, vjp)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False):
        if axis is None:
            n = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            n = math.prod(self.shape[a] for a in axes)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        x_shape = self.shape
        return _unary(self, self.data.reshape(*shape), lambda g: g.reshape(x_shape))

    def __getitem__(self, idx):
        x_shape = self.shape

        def vjp(g):
            full = np.zeros(x_shape)
            np.add.at(full, idx, g)
            return full

        return _unary(self, self.data[idx], vjp)

    @property
    def T(self):
        return _unary(self, self.data.T, lambda g: g.T)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, parents: tuple[Tensor, ...], vjps: tuple[Callable, ...]) -> Tensor:
    tape = _recording()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.entries.append((out, parents, vjps))
    return out


def _unary(x: Tensor, out: np.ndarray, vjp: Callable) -> Tensor:
    return _record(Tensor._wrap(np.asarray(out, dtype=np.float64)), (x,), (vjp,))


def _binary(a, b, fn, vjp_a, vjp_b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = Tensor._wrap(fn(ad, bd))
    return _record(
        out,
        (a, b),
        (
            lambda g: _unbroadcast(vjp_a(g, ad, bd), ad.shape),
            lambda g: _unbroadcast(vjp_b(g, ad, bd), bd.shape),
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not align")
    ad, bd = a.data, b.data
    return _record(Tensor._wrap(ad @ bd), (a, b), (lambda g: g @ bd.T, lambda g: ad.T @ g))


def silu(x: Tensor) -> Tensor:
    xd = x.data
    sig = expit(xd)
    return _unary(x, xd * sig, lambda g: g * sig * (1.0 + xd * (1.0 - sig)))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _unary(x, out, lambda g: g * out)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + sizes)

    def slicer(i):
        lo, hi = bounds[i], bounds[i + 1]
        return lambda g: np.take(g, np.arange(lo, hi), axis=axis)

    return _record(Tensor(out), tensors, tuple(slicer(i) for i in range(len(tensors))))


def stop_gradient(x: Tensor) -> Tensor:
    """Same values as ``x``; treated as a constant by :func:`backward`."""
    return Tensor(as_tensor(x).data.copy())


class Gradients:
    """Gradient map returned by :func:`backward`, keyed by tensor identity."""

    def __init__(self, grads: dict[int, np.ndarray], tensors: dict[int, Tensor]):
        self._grads = grads
        self._tensors = tensors

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(id(t))
        return np.zeros(t.shape) if g is None else g

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads

    def items(self):
        for k, g in self._grads.items():
            yield self._tensors[k], g


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Reverse sweep over ``tape`` starting from the scalar ``loss``."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    leaves: dict[int, Tensor] = {id(loss): loss}
    for out, parents, vjps in reversed(tape.entries):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for p, vjp in zip(parents, vjps):
            if not p.requires_grad:
                continue
            contrib = vjp(g)
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = np.array(contrib, dtype=np.float64)
                leaves[key] = p
    return Gradients(grads, leaves)


# ---------------------------------------------------------------------------
# parameters, MLPs, optimisation


@dataclass
class ParamSet:
    """Named trainable tensors plus AdamW moments and an EMA shadow copy."""

    params: dict[str, Tensor]
    layer_plan: list[dict] = field(default_factory=list)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    shadow: dict[str, np.ndarray] = field(default_factory=dict)
    ema_decay: float = 0.9999

    def __post_init__(self):
        for name, p in self.params.items():
            p.requires_grad = True
            p.name = name
            self.m.setdefault(name, np.zeros(p.shape))
            self.v.setdefault(name, np.zeros(p.shape))
            self.shadow.setdefault(name, p.data.copy())

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def grads(self, gradients: Gradients) -> dict[str, np.ndarray]:
        return {name: gradients[p] for name, p in self.params.items()}

    def values(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def copy(self) -> "ParamSet":
        out = ParamSet(
            {k: Tensor(p.data.copy()) for k, p in self.params.items()},
            layer_plan=[dict(layer) for layer in self.layer_plan],
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
            step=self.step,
            shadow={k: a.copy() for k, a in self.shadow.items()},
            ema_decay=self.ema_decay,
        )
        return out

    def ema_view(self) -> "ParamSet":
        """A fresh ParamSet whose live weights are this set's EMA shadow."""
        out = self.copy()
        for k, p in out.params.items():
            p.data = self.shadow[k].copy()
        return out

    def add(self, name: str, value: np.ndarray, layer: dict | None = None) -> None:
        t = Tensor(value, requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros(t.shape)
        self.v[name] = np.zeros(t.shape)
        self.shadow[name] = t.data.copy()
        if layer is not None:
            self.layer_plan.append(layer)


def init_mlp(
    rng: np.random.Generator,
    in_dim: int,
    hidden: Sequence[int],
    out_dim: int,
    embed_dims: Sequence[int] = (),
    zero_embeds: Iterable[int] = (),
) -> ParamSet:
    """He-style initialisation for a SiLU MLP with additive input embeddings.

    ``embed_dims`` lists the widths of side inputs that are linearly projected
    and added to the first pre-activation.  Indices in ``zero_embeds`` start
    with zero projections.
    """
    zero_embeds = set(zero_embeds)
    widths = list(hidden) + [out_dim]
    first = widths[0]
    params: dict[str, np.ndarray] = {}
    plan: list[dict] = []

    def dense(name, fan_in, fan_out, zero=False, bias=True):
        scale = 0.0 if zero else math.sqrt(1.0 / fan_in)
        params[f"{name}.W"] = rng.normal(0.0, 1.0, (fan_in, fan_out)) * scale
        if bias:
            params[f"{name}.b"] = np.zeros(fan_out)
        plan.append({"name": name, "in": fan_in, "out": fan_out, "bias": bias})

    dense("in", in_dim, first)
    for k, d in enumerate(embed_dims):
        dense(f"emb{k}", d, first, zero=k in zero_embeds, bias=False)
    for i in range(1, len(widths)):
        dense(f"h{i}", widths[i - 1], widths[i])
    ps = ParamSet({k: Tensor(v) for k, v in params.items()}, layer_plan=plan)
    return ps


def _layer(ps: ParamSet, name: str, x: Tensor) -> Tensor:
    W = ps[f"{name}.W"]
    if x.data.ndim != 2 or x.shape[1] != W.shape[0]:
        raise DimensionError(f"layer {name!r} expects width {W.shape[0]}, got input shape {x.shape}")
    out = x @ W
    if f"{name}.b" in ps:
        out = out + ps[f"{name}.b"]
    return out


def forward_mlp(ps: ParamSet, x, embeddings: Sequence = ()) -> Tensor:
    """Evaluate the MLP described by ``ps.layer_plan``.

    The first layer receives ``x`` plus one linear projection per embedding;
    every later layer is preceded by SiLU.  The last layer is linear.
    """
    x = as_tensor(x)
    n_emb = sum(1 for layer in ps.layer_plan if layer["name"].startswith("emb"))
    if len(embeddings) != n_emb:
        raise DimensionError(f"layer 'in' expects {n_emb} embeddings, got {len(embeddings)}")
    h = _layer(ps, "in", x)
    for k, e in enumerate(embeddings):
        h = h + _layer(ps, f"emb{k}", as_tensor(e))
    n_hidden = sum(1 for layer in ps.layer_plan if layer["name"].startswith("h"))
    for i in range(1, n_hidden + 1):
        h = _layer(ps, f"h{i}", silu(h))
    return h


def adamw_step(
    ps: ParamSet,
    grads: dict[str, np.ndarray],
    lr: float,
    weight_decay: float = 0.0,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> ParamSet:
    """One in-place AdamW update with decoupled weight decay."""
    missing = set(ps.params) - set(grads)
    if missing:
        raise KeyError(f"no gradient for parameters {sorted(missing)}")
    for name in ps.params:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.isfinite(g).sum())
            raise FloatingPointError(f"non-finite gradient for {name!r} ({bad} entries) at step {ps.step}")
    b1, b2 = betas
    ps.step += 1
    c1 = 1.0 - b1**ps.step
    c2 = 1.0 - b2**ps.step
    for name, p in ps.params.items():
        g = grads[name]
        m = ps.m[name]
        v = ps.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return ps


def ema_update(ps: ParamSet, decay: float) -> ParamSet:
    """shadow <- decay * shadow + (1 - decay) * live, in place."""
    if not 0.0 <= decay < 1.0:
        raise ValueError(f"EMA decay must be in [0, 1), got {decay}")
    for name, p in ps.params.items():
        s = ps.shadow[name]
        s *= decay
        s += (1.0 - decay) * p.data
    return ps


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def _arrays_to_json(arrays: dict[str, np.ndarray]) -> dict[str, list[float]]:
    return {k: [float(x) for x in np.asarray(a).ravel()] for k, a in arrays.items()}


def _arrays_from_json(flat: dict[str, list[float]], shapes: dict[str, tuple]) -> dict[str, np.ndarray]:
    return {k: np.asarray(flat[k], dtype=np.float64).reshape(shapes[k]) for k in shapes}


def _param_shapes(layer_plan: list[dict]) -> dict[str, tuple]:
    shapes = {}
    for layer in layer_plan:
        shapes[f"{layer['name']}.W"] = (layer["in"], layer["out"])
        if layer.get("bias", True):
            shapes[f"{layer['name']}.b"] = (layer["out"],)
    return shapes


def checkpoint_dict(ps: ParamSet, rng: np.random.Generator | None = None, meta: dict | None = None) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "layer_plan": ps.layer_plan,
        "params": _arrays_to_json(ps.values()),
        "ema": {"decay": ps.ema_decay, "shadow": _arrays_to_json(ps.shadow)},
        "opt_state": {"step": ps.step, "m": _arrays_to_json(ps.m), "v": _arrays_to_json(ps.v)},
        "rng_state": None if rng is None else rng.bit_generator.state,
        "meta": meta or {},
    }


def paramset_from_dict(d: dict) -> tuple[ParamSet, dict | None, dict]:
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
    plan = d["layer_plan"]
    shapes = _param_shapes(plan)
    ps = ParamSet(
        {k: Tensor(a) for k, a in _arrays_from_json(d["params"], shapes).items()},
        layer_plan=plan,
        m=_arrays_from_json(d["opt_state"]["m"], shapes),
        v=_arrays_from_json(d["opt_state"]["v"], shapes),
        step=int(d["opt_state"]["step"]),
        shadow=_arrays_from_json(d["ema"]["shadow"], shapes),
        ema_decay=float(d["ema"]["decay"]),
    )
    return ps, d.get("rng_state"), d.get("meta", {})


def save_checkpoint(path, ps: ParamSet, rng: np.random.Generator | None = None, meta: dict | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(ps, rng, meta), fh, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path) -> tuple[ParamSet, dict | None, dict]:
    with open(path) as fh:
        return paramset_from_dict(json.load(fh))


def rng_from_state(state: dict) -> np.random.Generator:
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)
