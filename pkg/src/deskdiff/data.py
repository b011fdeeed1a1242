"""Toy datasets, all scaled to roughly [-1, 1]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MixtureSpec:
    means: tuple[float, ...] = (-0.5, 0.5)
    stds: tuple[float, ...] = (0.1, 0.1)
    weights: tuple[float, ...] = (0.5, 0.5)
    dim: int = 1

    def sample(self, n: int, rng: np.random.Generator, return_labels: bool = False):
        w = np.asarray(self.weights, dtype=np.float64)
        comp = rng.choice(len(w), size=n, p=w / w.sum())
        mu = np.asarray(self.means)[comp][:, None]
        sd = np.asarray(self.stds)[comp][:, None]
        x = mu + sd * rng.standard_normal((n, self.dim))
        return (x, comp) if return_labels else x

    def density(self, x) -> np.ndarray:
        """Mixture pdf of a 1-D argument."""
        x = np.asarray(x, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        w = w / w.sum()
        out = np.zeros_like(x)
        for wi, m, s in zip(w, self.means, self.stds):
            out += wi * np.exp(-0.5 * ((x - m) / s) ** 2) / (s * np.sqrt(2 * np.pi))
        return out


def bimodal(n: int, rng: np.random.Generator, spec: MixtureSpec | None = None) -> np.ndarray:
    return (spec or MixtureSpec()).sample(n, rng)


def two_class(n: int, rng: np.random.Generator, dim: int = 2, center: float = 0.6,
              std: float = 0.1, jitter: float = 0.02):
    """Class 0 near -center, class 1 near +center; each sample is a near-constant vector.

    Returns ``(x, labels)`` with ``x`` of shape ``(n, dim)``.
    """
    labels = rng.integers(0, 2, size=n)
    level = np.where(labels == 0, -center, center) + std * rng.standard_normal(n)
    x = level[:, None] + jitter * rng.standard_normal((n, dim))
    return x, labels
