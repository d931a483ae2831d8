"""Toy data distributions used to train desk-scale teachers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["GaussianRing", "ring_centers", "make_dataset"]


def ring_centers(n_modes: int = 8, radius: float = 4.0) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(n_modes) / n_modes
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


@dataclass
class GaussianRing:
    """Equal-weight mixture of isotropic Gaussians placed on a circle.

    With ``n_classes > 0`` every mode gets a label; mode ``k`` belongs to class
    ``class_of_mode[k]``.  The labelled variant splits the ring into contiguous
    arcs so each class has a distinct mean.
    """

    n_modes: int = 8
    radius: float = 4.0
    std: float = 0.15
    n_classes: int = 0

    @property
    def dim(self) -> int:
        return 2

    @property
    def centers(self) -> np.ndarray:
        return ring_centers(self.n_modes, self.radius)

    @property
    def class_of_mode(self) -> np.ndarray:
        if not self.n_classes:
            return np.zeros(self.n_modes, dtype=int)
        return np.arange(self.n_modes) * self.n_classes // self.n_modes

    def class_centers(self, label: int) -> np.ndarray:
        return self.centers[self.class_of_mode == label]

    def sample(self, rng: np.random.Generator, n: int, labels: np.ndarray | None = None):
        """Draw ``n`` points; returns ``(x, labels)`` (labels is None if unlabelled)."""
        if labels is None and self.n_classes:
            labels = rng.integers(0, self.n_classes, n)
        if labels is None:
            modes = rng.integers(0, self.n_modes, n)
        else:
            labels = np.asarray(labels)
            per_class = [np.flatnonzero(self.class_of_mode == c) for c in range(self.n_classes)]
            pick = rng.integers(0, self.n_modes // self.n_classes, n)
            modes = np.array([per_class[c][k] for c, k in zip(labels, pick)], dtype=int)
        x = self.centers[modes] + self.std * rng.standard_normal((n, 2))
        return x, labels

    def to_dict(self) -> dict:
        return {
            "name": "ring",
            "n_modes": self.n_modes,
            "radius": self.radius,
            "std": self.std,
            "n_classes": self.n_classes,
        }


def make_dataset(d: dict) -> GaussianRing:
    d = dict(d)
    name = d.pop("name", "ring")
    if name != "ring":
        raise ValueError(f"unknown dataset {name!r}")
    return GaussianRing(**d)
