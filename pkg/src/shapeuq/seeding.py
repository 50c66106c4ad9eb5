"""Deterministic derivation of per-purpose RNGs from one root seed.

Every stochastic component takes a seed; commands derive all of them from a
single root seed so a run is reproducible from one number.
"""

import zlib

import numpy as np


def child_seed(root_seed: int, *path: str) -> int:
    """Derive a stable 32-bit seed for a named purpose under ``root_seed``."""
    entropy = [int(root_seed) & 0xFFFFFFFF]
    entropy.extend(zlib.crc32(p.encode("utf-8")) for p in path)
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def rng_for(root_seed: int, *path: str) -> np.random.Generator:
    """Generator seeded by ``child_seed(root_seed, *path)``."""
    return np.random.default_rng(child_seed(root_seed, *path))
