"""Conditional SDF decoder and its auto-decoder training loop.

The decoder maps (3D point, D-dim code) to a clamped signed distance:
the network's tanh output is scaled by sdf_clamp, so predictions live in
[-sdf_clamp, sdf_clamp] by construction.  Training jointly optimizes the
network weights and one free code per shape under a clamped-L1 loss plus a
squared-norm code regularizer; the optimized codes become the ground-truth
targets for the view encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .seeding import child_seed, rng_for
from .shapes import ShapeSpec, sample_training_points

DEFAULT_HIDDEN = (128, 128, 128, 128)
DEFAULT_SDF_CLAMP = 0.1


class TrainingError(RuntimeError):
    """Raised when optimization diverges (non-finite loss)."""


@dataclass
class DecoderModel:
    mlp: nn.MlpModel              # input 3 + D, output 1, tanh head
    latent_dim: int
    sdf_clamp: float = DEFAULT_SDF_CLAMP

    def __post_init__(self):
        if self.mlp.in_dim != 3 + self.latent_dim:
            raise ValueError("decoder input width must be 3 + latent_dim")
        if self.mlp.out_dim != 1:
            raise ValueError("decoder must output one SDF value")
        if self.mlp.activations[-1] != "tanh":
            raise ValueError("decoder head must be tanh (clamped output)")

    def decode(self, code, points) -> np.ndarray:
        """Clamped SDF predictions, one per point."""
        code = np.asarray(code, dtype=np.float64).reshape(-1)
        if len(code) != self.latent_dim:
            raise ValueError(f"code length {len(code)} != {self.latent_dim}")
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        inp = np.concatenate(
            [points, np.broadcast_to(code, (len(points), self.latent_dim))],
            axis=1)
        out = nn.forward_infer(self.mlp, inp)
        return self.sdf_clamp * out[:, 0]


def decode_sdf(model: DecoderModel, code, points) -> np.ndarray:
    return model.decode(code, points)


def init_decoder(latent_dim: int, seed: int,
                 hidden=DEFAULT_HIDDEN,
                 sdf_clamp: float = DEFAULT_SDF_CLAMP) -> DecoderModel:
    dims = [3 + latent_dim, *hidden, 1]
    acts = ["relu"] * len(hidden) + ["tanh"]
    return DecoderModel(nn.init_mlp(dims, acts, seed), latent_dim, sdf_clamp)


@dataclass
class LatentCodebook:
    """Optimized per-instance codes from auto-decoder training."""

    codes: dict[int, np.ndarray] = field(default_factory=dict)

    def __contains__(self, instance_id: int) -> bool:
        return instance_id in self.codes

    def __getitem__(self, instance_id: int) -> np.ndarray:
        return self.codes[instance_id]

    def __len__(self) -> int:
        return len(self.codes)

    @property
    def dim(self) -> int:
        return len(next(iter(self.codes.values())))

    def stacked(self) -> np.ndarray:
        return np.stack([self.codes[i] for i in sorted(self.codes)])

    def per_dimension_std(self) -> np.ndarray:
        return self.stacked().std(axis=0)


def save_codebook(path, codebook: LatentCodebook) -> None:
    """Text records: instance_id then D full-precision floats."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# shapeuq-codebook 1 dim={codebook.dim}\n")
        for iid in sorted(codebook.codes):
            vals = " ".join(repr(float(v)) for v in codebook.codes[iid])
            f.write(f"{iid} {vals}\n")


def load_codebook(path) -> LatentCodebook:
    codes = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            codes[int(parts[0])] = np.array([float(v) for v in parts[1:]])
    return LatentCodebook(codes)


@dataclass
class DecoderTrainConfig:
    latent_dim: int = 8
    hidden: tuple = DEFAULT_HIDDEN
    sdf_clamp: float = DEFAULT_SDF_CLAMP
    epochs: int = 500
    batch_size: int = 512
    lr_weights: float = 1e-4
    lr_codes: float = 1e-3
    code_init_sigma: float = 0.01
    code_reg_weight: float = 1e-4
    n_surface: int = 4096
    n_uniform: int = 1024
    surface_noise_sigma: float = 0.02
    seed: int = 0


@dataclass
class ShapeSamples:
    instance_id: int
    points: np.ndarray    # (N, 3)
    sdf: np.ndarray       # (N,)


def build_training_samples(specs: list[ShapeSpec],
                           config: DecoderTrainConfig) -> list[ShapeSamples]:
    out = []
    for spec in sorted(specs, key=lambda s: s.instance_id):
        pts, sdf = sample_training_points(
            spec, config.n_surface, config.n_uniform,
            config.surface_noise_sigma,
            seed=child_seed(config.seed, "samples", str(spec.instance_id)))
        out.append(ShapeSamples(spec.instance_id, pts, sdf))
    return out


def _clamped_l1_grad(pred: np.ndarray, target: np.ndarray, clamp: float
                     ) -> tuple[float, np.ndarray]:
    """Mean |pred - clip(target)| and its gradient wrt pred.

    Predictions are already inside [-clamp, clamp] by construction, so only
    the target needs clipping.
    """
    t = np.clip(target, -clamp, clamp)
    diff = pred - t
    return float(np.abs(diff).mean()), np.sign(diff) / len(pred)


def train_decoder(specs: list[ShapeSpec], samples: list[ShapeSamples],
                  config: DecoderTrainConfig
                  ) -> tuple[DecoderModel, LatentCodebook, list[float]]:
    """Jointly optimize decoder weights and one code per training shape.

    Returns (decoder, codebook, per-epoch loss trace).  Raises
    TrainingError on divergence.
    """
    if len(samples) < 1:
        raise ValueError("need at least one training shape")
    model = init_decoder(config.latent_dim,
                         seed=child_seed(config.seed, "decoder", "init"),
                         hidden=config.hidden, sdf_clamp=config.sdf_clamp)
    w_state = nn.adam_init(model.mlp, lr=config.lr_weights)

    code_rng = rng_for(config.seed, "decoder", "codes")
    ids = [s.instance_id for s in samples]
    codes = {iid: code_rng.normal(scale=config.code_init_sigma,
                                  size=config.latent_dim) for iid in ids}
    code_states = {iid: nn.VectorAdam(config.latent_dim, lr=config.lr_codes)
                   for iid in ids}

    batch_rng = rng_for(config.seed, "decoder", "batches")
    trace = []
    for epoch in range(config.epochs):
        order = batch_rng.permutation(len(samples))
        epoch_loss = 0.0
        for si in order:
            shape = samples[si]
            code = codes[shape.instance_id]
            n = len(shape.points)
            take = min(config.batch_size, n)
            idx = batch_rng.choice(n, size=take, replace=False)
            pts, target = shape.points[idx], shape.sdf[idx]

            inp = np.concatenate(
                [pts, np.broadcast_to(code, (take, config.latent_dim))], axis=1)
            out, cache = nn.forward(model.mlp, inp)
            pred = config.sdf_clamp * out[:, 0]
            loss, d_pred = _clamped_l1_grad(pred, target, config.sdf_clamp)
            loss += config.code_reg_weight * float(code @ code)
            if not np.isfinite(loss):
                raise TrainingError(f"decoder loss diverged at epoch {epoch} "
                                    f"(shape {shape.instance_id})")

            grads = nn.backward(model.mlp, cache,
                                (config.sdf_clamp * d_pred)[:, None])
            nn.adam_step(model.mlp, grads, w_state)
            code_grad = (grads.d_input[:, 3:].sum(axis=0)
                         + 2.0 * config.code_reg_weight * code)
            code_states[shape.instance_id].step(code, code_grad)
            epoch_loss += loss
        trace.append(epoch_loss / len(samples))
    codebook = LatentCodebook({iid: codes[iid].copy() for iid in ids})
    return model, codebook, trace


def evaluate_clamped_l1(model: DecoderModel, code, samples: ShapeSamples
                        ) -> float:
    pred = model.decode(code, samples.points)
    target = np.clip(samples.sdf, -model.sdf_clamp, model.sdf_clamp)
    return float(np.abs(pred - target).mean())


@dataclass
class InferCodeConfig:
    iters: int = 400
    lr: float = 1e-2
    seed: int = 0
    code_init_sigma: float = 0.01
    code_reg_weight: float = 1e-4
    batch_size: int = 512


def infer_code(model: DecoderModel, points, sdf, config: InferCodeConfig
               ) -> np.ndarray:
    """Optimize a code for labelled SDF samples with frozen decoder weights
    (test-time reconstruction; also the independent check on encoder
    quality)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    sdf = np.asarray(sdf, dtype=np.float64).reshape(-1)
    rng = rng_for(config.seed, "infer_code")
    code = rng.normal(scale=config.code_init_sigma, size=model.latent_dim)
    opt = nn.VectorAdam(model.latent_dim, lr=config.lr)
    n = len(points)
    for _ in range(config.iters):
        take = min(config.batch_size, n)
        idx = rng.choice(n, size=take, replace=False)
        inp = np.concatenate(
            [points[idx],
             np.broadcast_to(code, (take, model.latent_dim))], axis=1)
        out, cache = nn.forward(model.mlp, inp)
        pred = model.sdf_clamp * out[:, 0]
        loss, d_pred = _clamped_l1_grad(pred, sdf[idx], model.sdf_clamp)
        if not np.isfinite(loss):
            raise TrainingError("code inference diverged")
        grads = nn.backward(model.mlp, cache,
                            (model.sdf_clamp * d_pred)[:, None])
        code_grad = (grads.d_input[:, 3:].sum(axis=0)
                     + 2.0 * config.code_reg_weight * code)
        opt.step(code, code_grad)
    return code


def save_decoder(path, model: DecoderModel, codebook: LatentCodebook,
                 seed: int) -> None:
    ids = sorted(codebook.codes)
    arrays = {"codebook": np.stack([codebook.codes[i] for i in ids]),
              "codebook_ids": np.array(ids, dtype=np.float64)}
    meta = {"kind": "decoder", "latent_dim": str(model.latent_dim),
            "sdf_clamp": repr(model.sdf_clamp)}
    nn.save_model(path, model.mlp, seed=seed, meta=meta, arrays=arrays)


def load_decoder(path) -> tuple[DecoderModel, LatentCodebook]:
    box = nn.load_model(path)
    if box.meta.get("kind") != "decoder":
        raise ValueError(f"{path} is not a decoder container")
    model = DecoderModel(box.model, int(box.meta["latent_dim"]),
                         float(box.meta["sdf_clamp"]))
    ids = box.arrays["codebook_ids"].astype(int)
    codes = {int(i): box.arrays["codebook"][k] for k, i in enumerate(ids)}
    return model, LatentCodebook(codes)
