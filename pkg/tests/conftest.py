"""Shared fixtures.

The desk-scale pipeline fixture trains the full model stack once per
session (decoder on a 20-shape family with 4 held out, plus ES- and
NLL-trained encoders).  Set SHAPEUQ_TEST_CACHE to a directory to reuse the
trained artifacts across local runs while iterating; CI-style runs train
from scratch.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from shapeuq import decoder, encoder, shapes, views

FAMILY_SEED = 11
FAMILY_SIZE = 20
HOLDOUT = 4
DECODER_SEED = 0
ENCODER_SEED = 1
DATASET_SEED = 5


@dataclass
class DeskModels:
    family: list
    train_specs: list
    holdout_specs: list
    decoder: decoder.DecoderModel
    codebook: decoder.LatentCodebook
    encoder_es: encoder.EncoderModel
    encoder_nll: encoder.EncoderModel
    decoder_loss: float


def _train_stack(cache_dir: Path | None) -> DeskModels:
    specs = shapes.make_family(FAMILY_SIZE, seed=FAMILY_SEED)
    train_specs, holdout_specs = shapes.split_family(specs, HOLDOUT)

    paths = None
    if cache_dir is not None:
        cache_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "decoder": cache_dir / "decoder.shapeuq",
            "es": cache_dir / "encoder_es.shapeuq",
            "nll": cache_dir / "encoder_nll.shapeuq",
            "loss": cache_dir / "decoder_loss.txt",
        }

    if paths and all(p.exists() for p in paths.values()):
        dec, book = decoder.load_decoder(paths["decoder"])
        enc_es = encoder.load_encoder(paths["es"])
        enc_nll = encoder.load_encoder(paths["nll"])
        final_loss = float(paths["loss"].read_text())
        return DeskModels(specs, train_specs, holdout_specs, dec, book,
                          enc_es, enc_nll, final_loss)

    dcfg = decoder.DecoderTrainConfig(latent_dim=8, epochs=500,
                                      seed=DECODER_SEED)
    samples = decoder.build_training_samples(train_specs, dcfg)
    dec, book, dtrace = decoder.train_decoder(train_specs, samples, dcfg)

    dataset = views.make_view_dataset(train_specs, book,
                                      views_per_instance=24,
                                      seed=DATASET_SEED)
    enc_es, _ = encoder.train_encoder(
        dataset, encoder.EncoderTrainConfig(loss="es", epochs=150,
                                            seed=ENCODER_SEED))
    enc_nll, _ = encoder.train_encoder(
        dataset, encoder.EncoderTrainConfig(loss="nll", epochs=150,
                                            seed=ENCODER_SEED))

    if paths:
        decoder.save_decoder(paths["decoder"], dec, book, seed=DECODER_SEED)
        encoder.save_encoder(paths["es"], enc_es, seed=ENCODER_SEED)
        encoder.save_encoder(paths["nll"], enc_nll, seed=ENCODER_SEED)
        paths["loss"].write_text(repr(dtrace[-1]))
    return DeskModels(specs, train_specs, holdout_specs, dec, book,
                      enc_es, enc_nll, float(dtrace[-1]))


@pytest.fixture(scope="session")
def desk_models() -> DeskModels:
    cache = os.environ.get("SHAPEUQ_TEST_CACHE")
    return _train_stack(Path(cache) if cache else None)


@pytest.fixture(scope="session")
def sphere_grid_64() -> np.ndarray:
    from shapeuq.propagation import grid_lattice
    spec = shapes.sphere_spec(0.3)
    return shapes.analytic_sdf(spec, grid_lattice(64)).reshape(64, 64, 64)


class LinearStubDecoder:
    """f(X, z) = a . z + b, independent of X: the closed-form propagation
    oracle (Var = sum a_d^2 sigma_d^2)."""

    def __init__(self, coeffs, offset: float = 0.0):
        self.coeffs = np.asarray(coeffs, dtype=np.float64)
        self.offset = offset
        self.latent_dim = len(self.coeffs)

    def decode(self, code, points):
        value = float(self.coeffs @ np.asarray(code)) + self.offset
        return np.full(len(np.atleast_2d(points)), value)


class SpatialLinearStubDecoder:
    """f(X, z) = (a . z) * (1 + x0) + b: varies over space, still linear in
    the code so the variance oracle holds pointwise."""

    def __init__(self, coeffs, offset: float = 0.0):
        self.coeffs = np.asarray(coeffs, dtype=np.float64)
        self.offset = offset
        self.latent_dim = len(self.coeffs)

    def decode(self, code, points):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        base = float(self.coeffs @ np.asarray(code))
        return base * (1.0 + points[:, 0]) + self.offset


@pytest.fixture
def linear_stub() -> LinearStubDecoder:
    return LinearStubDecoder([0.5, -1.2, 2.0, 0.3], offset=0.05)


@pytest.fixture
def spatial_linear_stub() -> SpatialLinearStubDecoder:
    return SpatialLinearStubDecoder([0.5, -1.2, 2.0, 0.3], offset=0.05)
