"""Procedural superellipsoid shape family with analytic signed distances.

The family |x/a|^e + |y/b|^e + |z/c|^e = 1 spans sphere-to-box variation
with four parameters per instance, all contained in the unit cube
[-0.5, 0.5]^3.  Signed distance is the first-order estimate
(g - 1) / |grad g| of the scaled e-norm g; because g is convex and
positively homogeneous this never overestimates the true distance outside
the surface (safe for sphere tracing) and is exact for spheres.  Accuracy
degrades far inside the shape, which is irrelevant under the decoder's
SDF clamp; see the near-surface oracle in the test-suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FAMILY_SUPERELLIPSOID = "superellipsoid"

# Family sampling ranges (documented source of truth for make_family).
# Anisotropy (max/min half extent) tops out at ~1.7 and exponents at 6:
# beyond that the near-surface gradient of the distance estimate drifts
# outside the documented [0.5, 1.5] band (see test_shapes eikonal check).
HALF_EXTENT_RANGE = (0.25, 0.42)
EXPONENT_RANGE = (1.5, 6.0)

_ORIGIN_EPS = 1e-12


@dataclass(frozen=True)
class ShapeSpec:
    family: str
    half_extents: tuple[float, float, float]
    exponent: float
    instance_id: int

    def __post_init__(self):
        if self.family != FAMILY_SUPERELLIPSOID:
            raise ValueError(f"unknown shape family {self.family!r}")
        for h in self.half_extents:
            if not 0.0 < h <= 0.5:
                raise ValueError(f"half extent {h} outside (0, 0.5]")
        if not 1.0 <= self.exponent <= 8.0:
            raise ValueError(f"exponent {self.exponent} outside [1, 8]")


def sphere_spec(radius: float = 0.3, instance_id: int = 0) -> ShapeSpec:
    return ShapeSpec(FAMILY_SUPERELLIPSOID, (radius, radius, radius), 2.0,
                     instance_id)


def _first_order_step(p: np.ndarray, he: np.ndarray, e: float
                      ) -> tuple[np.ndarray, np.ndarray]:
    """First-order distance estimate (g - 1)/|grad g| and the unit gradient
    direction, with the origin singularity patched to -min(he)."""
    u = np.abs(p) / he                      # (N, 3) scaled coordinates
    w = (u ** e).sum(axis=1)                # g^e
    g = w ** (1.0 / e)

    comp = np.where(u > 0.0, u ** (e - 1.0), 0.0) / he * np.sign(p)
    norm = np.sqrt((comp * comp).sum(axis=1))

    d = np.empty(len(p))
    at_origin = w <= _ORIGIN_EPS
    ok = ~at_origin
    d[ok] = (g[ok] - 1.0) * (g[ok] ** (e - 1.0)) / norm[ok]
    d[at_origin] = -float(he.min())
    direction = np.zeros_like(p)
    direction[ok] = comp[ok] / norm[ok, None]
    return d, direction


def analytic_sdf(spec: ShapeSpec, points) -> np.ndarray:
    """Signed distance (negative inside) at one point (3,) or a batch (N, 3).

    First-order estimate of the scaled e-norm: exact for spheres, never an
    overestimate outside (which keeps sphere tracing safe), accurate in the
    near-surface band used for training labels.  Interior values saturate
    toward the center and are clamp-clipped by every consumer.
    """
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 1
    if single:
        p = p[None, :]
    d, _ = _first_order_step(p, np.asarray(spec.half_extents), spec.exponent)
    return d[0] if single else d


def inside(spec: ShapeSpec, points) -> np.ndarray:
    """Implicit-function sign test, independent of the distance estimate."""
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 1
    if single:
        p = p[None, :]
    u = np.abs(p) / np.asarray(spec.half_extents)
    w = (u ** spec.exponent).sum(axis=1)
    res = w < 1.0
    return bool(res[0]) if single else res


def surface_points(spec: ShapeSpec, count: int, seed: int) -> np.ndarray:
    """Points on the surface by radial projection of uniform directions.

    Density is not exactly area-uniform for non-spheres; callers needing a
    uniform measure should sample a triangulated surface instead.
    """
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(count, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    u = np.abs(dirs) / np.asarray(spec.half_extents)
    g = (u ** spec.exponent).sum(axis=1) ** (1.0 / spec.exponent)
    return dirs / g[:, None]


@dataclass(frozen=True)
class SdfSample:
    point: tuple[float, float, float]
    sdf: float


def sample_training_points(spec: ShapeSpec, n_surface: int, n_uniform: int,
                           surface_noise_sigma: float, seed: int
                           ) -> tuple[np.ndarray, np.ndarray]:
    """Surface-biased plus uniform SDF samples, labelled analytically.

    Returns (points (N, 3), sdf (N,)) with the n_surface near-surface rows
    first.  Matching the sampling imbalance used for decoder training:
    surface points get an isotropic Gaussian offset of surface_noise_sigma,
    uniform points cover [-0.5, 0.5]^3.
    """
    if n_surface < 0 or n_uniform < 0:
        raise ValueError("sample counts must be non-negative")
    rng = np.random.default_rng(seed)
    parts = []
    if n_surface:
        base = surface_points(spec, n_surface, seed=int(rng.integers(2 ** 31)))
        offs = rng.normal(scale=surface_noise_sigma, size=(n_surface, 3)) \
            if surface_noise_sigma > 0 else 0.0
        parts.append(base + offs)
    if n_uniform:
        parts.append(rng.uniform(-0.5, 0.5, size=(n_uniform, 3)))
    points = np.vstack(parts) if parts else np.zeros((0, 3))
    return points, analytic_sdf(spec, points)


def make_family(count: int, seed: int) -> list[ShapeSpec]:
    """Deterministic, parameter-diverse family of superellipsoids."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(count):
        he = tuple(float(v) for v in rng.uniform(*HALF_EXTENT_RANGE, size=3))
        lo, hi = np.log(EXPONENT_RANGE[0]), np.log(EXPONENT_RANGE[1])
        e = float(np.exp(rng.uniform(lo, hi)))
        specs.append(ShapeSpec(FAMILY_SUPERELLIPSOID, he, e, instance_id=i))
    return specs


def split_family(specs: list[ShapeSpec], n_holdout: int
                 ) -> tuple[list[ShapeSpec], list[ShapeSpec]]:
    """Deterministic split by instance_id: highest ids are held out."""
    ordered = sorted(specs, key=lambda s: s.instance_id)
    if n_holdout == 0:
        return ordered, []
    return ordered[:-n_holdout], ordered[-n_holdout:]


def save_family_manifest(path, specs: list[ShapeSpec]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("# instance_id family hx hy hz exponent\n")
        for s in sorted(specs, key=lambda s: s.instance_id):
            hx, hy, hz = s.half_extents
            f.write(f"{s.instance_id} {s.family} {float(hx)!r} {float(hy)!r} "
                    f"{float(hz)!r} {float(s.exponent)!r}\n")


def load_family_manifest(path) -> list[ShapeSpec]:
    specs = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            iid, family, hx, hy, hz, e = line.split()
            specs.append(ShapeSpec(family, (float(hx), float(hy), float(hz)),
                                   float(e), int(iid)))
    return specs
