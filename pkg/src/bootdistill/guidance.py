"""Classifier-free guidance and target clipping for signal predictions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["GuidanceSpec", "cfg_combine", "denoise"]


@dataclass
class GuidanceSpec:
    """Condition, negative condition and guidance weight.

    ``weight`` may be a scalar or a per-sample array.  ``weight_range``, when
    set, is the interval that w-conditioned students are trained on.
    ``negative=None`` means the teacher's null condition.
    """

    condition: int | np.ndarray | None = None
    negative: int | None = None
    weight: float | np.ndarray = 1.0
    weight_range: tuple[float, float] | None = None

    def __post_init__(self):
        if np.any(np.asarray(self.weight) < 0):
            raise ValueError("guidance weight must be non-negative")
        if self.weight_range is not None:
            lo, hi = self.weight_range
            if not 0 <= lo <= hi:
                raise ValueError(f"bad weight range {self.weight_range}")
            self.weight_range = (float(lo), float(hi))

    def with_(self, **kw) -> "GuidanceSpec":
        d = dict(condition=self.condition, negative=self.negative, weight=self.weight, weight_range=self.weight_range)
        d.update(kw)
        return GuidanceSpec(**d)

    def to_dict(self) -> dict:
        return {
            "condition": None if self.condition is None else np.asarray(self.condition).tolist(),
            "negative": self.negative,
            "weight": np.asarray(self.weight).tolist(),
            "weight_range": None if self.weight_range is None else list(self.weight_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GuidanceSpec":
        unknown = set(d) - {"condition", "negative", "weight", "weight_range"}
        if unknown:
            raise ValueError(f"unknown guidance keys {sorted(unknown)}")
        d = dict(d)
        if d.get("weight_range") is not None:
            d["weight_range"] = tuple(d["weight_range"])
        return cls(**d)


def cfg_combine(teacher, x, t, spec: GuidanceSpec | None, clip: float | None = None) -> np.ndarray:
    """f(x,t,n) + w (f(x,t,c) - f(x,t,n)), then optional clipping to [-clip, clip]."""
    if spec is None or spec.condition is None:
        if spec is not None and not np.all(np.asarray(spec.weight) == 1.0) and teacher.conditional:
            raise ValueError("guidance weight given without a condition")
        f = teacher.predict_signal(x, t, None)
    else:
        if not teacher.conditional:
            raise ValueError("conditional query on an unconditional teacher")
        w = np.asarray(spec.weight, dtype=np.float64)
        f_c = teacher.predict_signal(x, t, spec.condition)
        if w.ndim == 0 and w == 1.0:
            f = f_c
        else:
            f_n = teacher.predict_signal(x, t, spec.negative)
            w = w[:, None] if w.ndim == 1 else w
            f = f_n + w * (f_c - f_n)
    if clip is not None:
        f = np.clip(f, -clip, clip)
    return f


def denoise(teacher, x, t, guidance: GuidanceSpec | None = None, clip: float | None = None) -> np.ndarray:
    """Signal prediction used by every sampler: guided, then clipped."""
    return cfg_combine(teacher, x, t, guidance, clip)
