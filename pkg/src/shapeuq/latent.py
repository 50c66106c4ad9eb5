"""Diagonal Gaussian belief over latent shape codes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VAR_FLOOR = 1e-6


@dataclass
class LatentGaussian:
    mean: np.ndarray   # (D,)
    var: np.ndarray    # (D,), strictly positive

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.var = np.asarray(self.var, dtype=np.float64).reshape(-1)
        if self.mean.shape != self.var.shape:
            raise ValueError("mean and var dimensions differ")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.var))):
            raise ValueError("non-finite latent Gaussian")
        if np.any(self.var <= 0.0):
            raise ValueError("variances must be strictly positive")

    @property
    def dim(self) -> int:
        return len(self.mean)

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.var)

    def trace(self) -> float:
        """Trace of the diagonal covariance (the view-ranking statistic)."""
        return float(self.var.sum())

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """(count, D) draws via the reparameterization mean + sigma * eps."""
        eps = rng.standard_normal((count, self.dim))
        return self.mean[None, :] + self.sigma[None, :] * eps
