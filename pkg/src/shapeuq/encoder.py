"""Uncertainty-aware view encoder and its training losses.

The encoder maps a flattened silhouette+depth raster to a latent Gaussian:
the network emits means and log-variances, and variances are exponentiated
then floored so positivity is structural.  Training penalizes the Gaussian
with either the negative log likelihood or the sample-based energy score;
both losses come with exact analytic gradients with respect to the mean and
log-variance heads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .latent import VAR_FLOOR, LatentGaussian
from .seeding import child_seed, rng_for
from .views import ViewDataset, ViewObservation, corrupt_crop, flip_horizontal

DEFAULT_HIDDEN = (512, 256)


class TrainingError(RuntimeError):
    """Raised when optimization diverges (non-finite loss)."""


@dataclass
class EncoderModel:
    mlp: nn.MlpModel
    latent_dim: int
    resolution: int
    var_floor: float = VAR_FLOOR

    def __post_init__(self):
        if self.mlp.out_dim != 2 * self.latent_dim:
            raise ValueError("encoder head width must be 2 * latent_dim")
        if self.mlp.in_dim != self.resolution * self.resolution * 2:
            raise ValueError("encoder input width must match raster size")


def init_encoder(latent_dim: int, resolution: int, seed: int,
                 hidden=DEFAULT_HIDDEN) -> EncoderModel:
    dims = [resolution * resolution * 2, *hidden, 2 * latent_dim]
    acts = ["relu"] * len(hidden) + ["identity"]
    return EncoderModel(nn.init_mlp(dims, acts, seed), latent_dim, resolution)


def _flatten_views(views: list[ViewObservation]) -> np.ndarray:
    return np.stack([v.raster.reshape(-1) for v in views])


def _heads(model: EncoderModel, flat: np.ndarray
           ) -> tuple[np.ndarray, nn.ForwardCache, np.ndarray, np.ndarray,
                      np.ndarray]:
    """Forward pass returning (raw output, cache, mu, var, floor mask)."""
    out, cache = nn.forward(model.mlp, flat)
    d = model.latent_dim
    mu = out[:, :d]
    logvar = out[:, d:]
    raw_var = np.exp(logvar)
    var = np.maximum(raw_var, model.var_floor)
    unfloored = raw_var > model.var_floor
    return out, cache, mu, var, unfloored


def encode(model: EncoderModel, view: ViewObservation) -> LatentGaussian:
    """Deterministic latent Gaussian for a single view."""
    if view.resolution != model.resolution:
        raise ValueError(f"view resolution {view.resolution} != model "
                         f"{model.resolution}")
    return encode_batch(model, [view])[0]


def encode_batch(model: EncoderModel, views: list[ViewObservation]
                 ) -> list[LatentGaussian]:
    out = nn.forward_infer(model.mlp, _flatten_views(views))
    d = model.latent_dim
    mu = out[:, :d]
    var = np.maximum(np.exp(out[:, d:]), model.var_floor)
    return [LatentGaussian(mu[i], var[i]) for i in range(len(views))]


# ---------------------------------------------------------------------------
# Losses.  Inputs are raw arrays: mu (N, D), var (N, D) (already floored),
# targets (N, D).  Gradients are with respect to mu and log(var).
# ---------------------------------------------------------------------------


def nll_loss(mu, var, targets) -> tuple[float, np.ndarray, np.ndarray]:
    """Gaussian negative log likelihood:
    (1/2N) sum_i [ (mu_i - z_i)^T Sigma_i^{-1} (mu_i - z_i) + log det Sigma_i ].

    Returns (loss, d_mu, d_logvar).
    """
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(mu) == 0:
        raise ValueError("empty batch")
    if np.any(var <= 0.0):
        raise AssertionError("non-positive variance reached nll_loss")
    n = len(mu)
    err = mu - targets
    quad = (err * err / var).sum(axis=1)
    logdet = np.log(var).sum(axis=1)
    loss = float((quad + logdet).sum() / (2.0 * n))
    d_mu = err / var / n
    d_logvar = (1.0 - err * err / var) / (2.0 * n)
    return loss, d_mu, d_logvar


def energy_score_loss(mu, var, targets, m_samples: int, seed: int
                      ) -> tuple[float, np.ndarray, np.ndarray]:
    """Monte-Carlo energy score with reparameterized samples
    z_{i,m} = mu_i + sigma_i * eps_{i,m}:

    (1/N) sum_i [ (1/M) sum_m ||z_{i,m} - z_i||
                  - (1/(2(M-1))) sum_m ||z_{i,m} - z_{i,m+1}|| ]

    Returns (loss, d_mu, d_logvar); the confinement term's mu-gradient
    cancels exactly because consecutive samples share the mean.
    """
    if m_samples < 2:
        raise ValueError("energy score needs m_samples >= 2")
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(mu) == 0:
        raise ValueError("empty batch")
    n, d = mu.shape
    sigma = np.sqrt(var)
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((n, m_samples, d))
    z = mu[:, None, :] + sigma[:, None, :] * eps

    diff_t = z - targets[:, None, :]                      # (N, M, D)
    dist_t = np.linalg.norm(diff_t, axis=2)               # (N, M)
    safe_t = np.maximum(dist_t, 1e-300)
    unit_t = diff_t / safe_t[:, :, None]

    diff_p = z[:, :-1, :] - z[:, 1:, :]                   # (N, M-1, D)
    dist_p = np.linalg.norm(diff_p, axis=2)
    safe_p = np.maximum(dist_p, 1e-300)
    unit_p = diff_p / safe_p[:, :, None]

    loss = float((dist_t.mean(axis=1)
                  - dist_p.sum(axis=1) / (2.0 * (m_samples - 1))).mean())

    d_mu = unit_t.mean(axis=1) / n
    d_sigma_t = (unit_t * eps).mean(axis=1)
    eps_diff = eps[:, :-1, :] - eps[:, 1:, :]
    d_sigma_p = (unit_p * eps_diff).sum(axis=1) / (2.0 * (m_samples - 1))
    d_sigma = (d_sigma_t - d_sigma_p) / n
    d_logvar = d_sigma * sigma / 2.0
    return loss, d_mu, d_logvar


def energy_score_closed_form_1d(mu: float, sigma: float, target: float
                                ) -> float:
    """Population energy score of a 1-D Gaussian prediction (test oracle):
    E|X - t| - E|X - X'|/2 with X, X' ~ N(mu, sigma^2)."""
    from math import erf, exp, pi, sqrt
    m = mu - target
    e_abs = (sigma * sqrt(2.0 / pi) * exp(-m * m / (2 * sigma * sigma))
             + m * erf(m / (sqrt(2.0) * sigma)))
    return e_abs - sigma / sqrt(pi)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class EncoderTrainConfig:
    loss: str = "es"                      # "es" or "nll"
    m_samples: int = 64
    epochs: int = 60
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    hidden: tuple = DEFAULT_HIDDEN
    augment_min_scales: tuple = (1.0, 0.8, 0.4, 0.2, 0.1)
    augment_flip: bool = True
    pretrain_l2_epochs: int = 0           # optional mean-only warmup


def _augment(view: ViewObservation, min_scale: float, flip: bool, seed: int
             ) -> ViewObservation:
    out = corrupt_crop(view, min_scale, seed)
    return flip_horizontal(out) if flip else out


def train_encoder(dataset: ViewDataset, config: EncoderTrainConfig
                  ) -> tuple[EncoderModel, list[float]]:
    """Train against the frozen decoder's codebook targets.

    Every batch re-corrupts its views (random crop with a batch-level
    min_scale plus optional horizontal flip) so the variance head sees
    informative degradation.  Returns (model, per-epoch loss trace).
    """
    if config.loss not in ("es", "nll"):
        raise ValueError(f"unknown loss {config.loss!r}")
    if any(len(c) == 0 for c in dataset.codes):
        raise ValueError("dataset lacks ground-truth codes")
    latent_dim = len(dataset.codes[0])
    model = init_encoder(latent_dim, dataset.resolution,
                         seed=child_seed(config.seed, "encoder", "init"),
                         hidden=config.hidden)
    state = nn.adam_init(model.mlp, lr=config.lr)
    targets_all = np.stack(dataset.codes)
    order_rng = rng_for(config.seed, "encoder", "order")
    aug_rng = rng_for(config.seed, "encoder", "augment")
    es_rng = rng_for(config.seed, "encoder", "es")

    n = len(dataset)
    trace = []
    total_epochs = config.pretrain_l2_epochs + config.epochs
    for epoch in range(total_epochs):
        pretrain = epoch < config.pretrain_l2_epochs
        perm = order_rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            batch_scale = float(aug_rng.choice(config.augment_min_scales))
            batch_views = []
            for i in idx:
                flip = bool(config.augment_flip and aug_rng.integers(2))
                batch_views.append(_augment(dataset.views[i], batch_scale,
                                            flip,
                                            int(aug_rng.integers(2 ** 31))))
            flat = _flatten_views(batch_views)
            targets = targets_all[idx]
            out, cache, mu, var, unfloored = _heads(model, flat)

            if pretrain:
                err = mu - targets
                loss = float((err * err).mean())
                d_mu = 2.0 * err / err.size
                d_logvar = np.zeros_like(var)
            elif config.loss == "nll":
                loss, d_mu, d_logvar = nll_loss(mu, var, targets)
            else:
                loss, d_mu, d_logvar = energy_score_loss(
                    mu, var, targets, config.m_samples,
                    seed=int(es_rng.integers(2 ** 31)))
            if not np.isfinite(loss):
                raise TrainingError(
                    f"loss diverged at epoch {epoch} (loss={loss})")

            d_out = np.concatenate([d_mu, d_logvar * unfloored], axis=1)
            grads = nn.backward(model.mlp, cache, d_out)
            nn.adam_step(model.mlp, grads, state)
            epoch_loss += loss
            n_batches += 1
        trace.append(epoch_loss / n_batches)
    return model, trace


def save_encoder(path, model: EncoderModel, seed: int,
                 config: EncoderTrainConfig | None = None) -> None:
    meta = {"kind": "encoder", "latent_dim": str(model.latent_dim),
            "resolution": str(model.resolution),
            "var_floor": repr(model.var_floor)}
    if config is not None:
        meta["loss"] = config.loss
        meta["m_samples"] = str(config.m_samples)
    nn.save_model(path, model.mlp, seed=seed, meta=meta)


def load_encoder(path) -> EncoderModel:
    box = nn.load_model(path)
    if box.meta.get("kind") != "encoder":
        raise ValueError(f"{path} is not an encoder container")
    return EncoderModel(box.model, int(box.meta["latent_dim"]),
                        int(box.meta["resolution"]),
                        float(box.meta["var_floor"]))
