"""Precision-weighted fusion of diagonal-Gaussian latent observations.

Independent Gaussian estimates of the same code combine by summing
precisions: var = 1 / sum(1/var_i), mean = var * sum(mean_i / var_i),
elementwise per latent dimension.  Accumulation happens in precision space
for stability; input variances are floored at 1e-12 before inversion.
Outlier rejection keeps only the K observations with the smallest
covariance trace before fusing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .latent import LatentGaussian

PRECISION_VAR_FLOOR = 1e-12


def fuse(observations: list[LatentGaussian]) -> LatentGaussian:
    """Batch fusion of one or more observations (order-independent)."""
    if not observations:
        raise ValueError("fuse needs at least one observation")
    dim = observations[0].dim
    for obs in observations:
        if obs.dim != dim:
            raise ValueError("observations have mixed dimensions")
    variances = np.stack([np.maximum(o.var, PRECISION_VAR_FLOOR)
                          for o in observations])
    means = np.stack([o.mean for o in observations])
    precision = (1.0 / variances).sum(axis=0)
    weighted = (means / variances).sum(axis=0)
    return LatentGaussian(weighted / precision, 1.0 / precision)


def average_means(observations: list[LatentGaussian]) -> np.ndarray:
    """Equal-weight mean of the observation means (deterministic baseline,
    no posterior uncertainty)."""
    if not observations:
        raise ValueError("average needs at least one observation")
    return np.stack([o.mean for o in observations]).mean(axis=0)


@dataclass
class FusionState:
    """Incremental fusion accumulator with a per-view log.

    The log keeps every observation (plus its trace) so top-K selection can
    be re-run post hoc with a different K.
    """

    dim: int
    precision: np.ndarray = None         # sum of 1/var_i
    weighted_mean: np.ndarray = None     # sum of mean_i/var_i
    log: list[tuple[LatentGaussian, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.precision is None:
            self.precision = np.zeros(self.dim)
        if self.weighted_mean is None:
            self.weighted_mean = np.zeros(self.dim)

    @property
    def view_count(self) -> int:
        return len(self.log)

    def update(self, obs: LatentGaussian) -> "FusionState":
        if obs.dim != self.dim:
            raise ValueError(f"observation dim {obs.dim} != state dim {self.dim}")
        var = np.maximum(obs.var, PRECISION_VAR_FLOOR)
        self.precision = self.precision + 1.0 / var
        self.weighted_mean = self.weighted_mean + obs.mean / var
        self.log.append((obs, obs.trace()))
        return self

    def posterior(self) -> LatentGaussian:
        if not self.log:
            raise ValueError("no observations fused yet")
        return LatentGaussian(self.weighted_mean / self.precision,
                              1.0 / self.precision)


def fuse_incremental(state: FusionState, obs: LatentGaussian) -> FusionState:
    return state.update(obs)


def select_lowest_trace(observations: list[LatentGaussian], k: int
                        ) -> list[int]:
    """Indices of the K observations with the smallest covariance trace,
    ties broken by earlier view index.  Returned in view order."""
    if not 1 <= k <= len(observations):
        raise ValueError(f"k={k} outside [1, {len(observations)}]")
    traces = [o.trace() for o in observations]
    order = sorted(range(len(observations)), key=lambda i: (traces[i], i))
    return sorted(order[:k])


def fuse_top_k(observations: list[LatentGaussian], k: int
               ) -> tuple[list[int], LatentGaussian]:
    """Keep the K lowest-trace observations and fuse them."""
    selected = select_lowest_trace(observations, k)
    return selected, fuse([observations[i] for i in selected])


def save_fusion_trace_csv(path, observations: list[LatentGaussian],
                          selected: list[int] | None = None) -> None:
    """Per-view trace log: view index, covariance trace, selected flag, and
    the running posterior trace after each incremental step."""
    selected_set = set(range(len(observations)) if selected is None else selected)
    state = FusionState(dim=observations[0].dim)
    with open(path, "w", encoding="utf-8") as f:
        f.write("view,trace,selected,posterior_trace_after\n")
        for i, obs in enumerate(observations):
            state.update(obs)
            f.write(f"{i},{obs.trace()!r},{int(i in selected_set)},"
                    f"{state.posterior().trace()!r}\n")
