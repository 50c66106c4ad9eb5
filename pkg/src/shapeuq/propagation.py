"""Monte-Carlo propagation of latent uncertainty to SDF space.

One latent draw induces one full SDF field, so all query points share the
same M code samples (this preserves the spatial correlation of the
uncertainty).  Grids use Welford streaming accumulation: memory stays
O(points) instead of O(M * points).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .latent import LatentGaussian

# Shared decode batch size; grid and point paths chunk identically so their
# results match bitwise.
DECODE_CHUNK = 32768

GRID_DOMAIN = (-0.5, 0.5)


class _WelfordAccumulator:
    """Streaming per-point mean and M2 over sample fields."""

    def __init__(self, n_points: int):
        self.count = 0
        self.mean = np.zeros(n_points)
        self.m2 = np.zeros(n_points)

    def add(self, values: np.ndarray) -> None:
        self.count += 1
        delta = values - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (values - self.mean)

    def variance(self) -> np.ndarray:
        if self.count < 2:
            raise ValueError("variance needs at least two samples")
        return self.m2 / (self.count - 1)


def _decode_chunked(decoder, code: np.ndarray, points: np.ndarray) -> np.ndarray:
    out = np.empty(len(points))
    for start in range(0, len(points), DECODE_CHUNK):
        stop = min(start + DECODE_CHUNK, len(points))
        out[start:stop] = decoder.decode(code, points[start:stop])
    return out


def propagate_point(decoder, latent: LatentGaussian, points, m_samples: int,
                    seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased sample variance of the decoded SDF at each
    query point, over m_samples latent draws.

    ``decoder`` is anything with decode(code, points) -> (N,) values.
    """
    if m_samples < 2:
        raise ValueError("m_samples must be >= 2 (sample variance undefined)")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rng = np.random.default_rng(seed)
    codes = latent.sample(m_samples, rng)
    acc = _WelfordAccumulator(len(points))
    for m in range(m_samples):
        acc.add(_decode_chunked(decoder, codes[m], points))
    return acc.mean, acc.variance()


@dataclass
class UncertainSdfGrid:
    resolution: int
    mean: np.ndarray          # (R, R, R)
    var: np.ndarray           # (R, R, R), non-negative
    sample_count: int
    domain: tuple[float, float] = GRID_DOMAIN

    def lattice(self) -> np.ndarray:
        """(R^3, 3) lattice coordinates in x-major (C) order."""
        c = np.linspace(self.domain[0], self.domain[1], self.resolution)
        x, y, z = np.meshgrid(c, c, c, indexing="ij")
        return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)


def grid_lattice(resolution: int,
                 domain: tuple[float, float] = GRID_DOMAIN) -> np.ndarray:
    c = np.linspace(domain[0], domain[1], resolution)
    x, y, z = np.meshgrid(c, c, c, indexing="ij")
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)


def propagate_grid(decoder, latent: LatentGaussian, resolution: int,
                   m_samples: int, seed: int) -> UncertainSdfGrid:
    """propagate_point over the R^3 lattice covering [-0.5, 0.5]^3."""
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    pts = grid_lattice(resolution)
    mean, var = propagate_point(decoder, latent, pts, m_samples, seed)
    shape = (resolution,) * 3
    return UncertainSdfGrid(resolution, mean.reshape(shape), var.reshape(shape),
                            m_samples)


def propagate_vertices(decoder, latent: LatentGaussian, vertices,
                       m_samples: int, seed: int) -> np.ndarray:
    """Per-vertex SDF standard deviation (sqrt of the sample variance)."""
    _, var = propagate_point(decoder, latent, vertices, m_samples, seed)
    return np.sqrt(var)


def decode_mean_grid(decoder, code: np.ndarray, resolution: int) -> np.ndarray:
    """Single decode pass of one code over the lattice (no uncertainty)."""
    pts = grid_lattice(resolution)
    vals = _decode_chunked(decoder, np.asarray(code, dtype=np.float64), pts)
    return vals.reshape((resolution,) * 3)


@dataclass
class SdfHistogram:
    point: tuple[float, float, float]
    samples: np.ndarray       # (M,)
    bin_edges: np.ndarray     # (bins + 1,)
    counts: np.ndarray        # (bins,), sums to M


def sdf_histogram(decoder, latent: LatentGaussian, point, m_samples: int,
                  bins: int, seed: int) -> SdfHistogram:
    """Raw decoded-SDF samples at one point plus their binned counts."""
    if m_samples < 100:
        raise ValueError("histograms need m_samples >= 100")
    point = np.asarray(point, dtype=np.float64).reshape(3)
    rng = np.random.default_rng(seed)
    codes = latent.sample(m_samples, rng)
    pts = point[None, :]
    samples = np.array([decoder.decode(codes[m], pts)[0]
                        for m in range(m_samples)])
    counts, edges = np.histogram(samples, bins=bins)
    return SdfHistogram(tuple(point), samples, edges, counts)


def smoothed_mode_count(counts: np.ndarray, window: int = 5) -> int:
    """Number of distinct local maxima after a moving-average smooth."""
    counts = np.asarray(counts, dtype=np.float64)
    kernel = np.ones(window) / window
    sm = np.convolve(counts, kernel, mode="same")
    modes = 0
    i = 1
    while i < len(sm) - 1:
        if sm[i] > sm[i - 1] and sm[i] >= sm[i + 1]:
            # walk over any plateau
            j = i
            while j < len(sm) - 1 and sm[j] == sm[j + 1]:
                j += 1
            if j == len(sm) - 1 or sm[j] > sm[j + 1]:
                modes += 1
            i = j + 1
        else:
            i += 1
    if len(sm) >= 2 and sm[0] > sm[1]:
        modes += 1
    if len(sm) >= 2 and sm[-1] > sm[-2]:
        modes += 1
    return modes


def save_grid(path, grid: UncertainSdfGrid) -> None:
    """Binary blob: text header (resolution, domain, sample count), then the
    mean and variance arrays as little-endian float64."""
    header = (f"shapeuq-grid 1\n"
              f"resolution {grid.resolution}\n"
              f"domain {float(grid.domain[0])!r} {float(grid.domain[1])!r}\n"
              f"samples {grid.sample_count}\n"
              f"end_header\n")
    with open(path, "wb") as f:
        f.write(header.encode("utf-8"))
        f.write(np.ascontiguousarray(grid.mean, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(grid.var, dtype="<f8").tobytes())


def load_grid(path) -> UncertainSdfGrid:
    with open(path, "rb") as f:
        blob = f.read()
    end = blob.find(b"end_header\n")
    if end < 0:
        raise ValueError(f"{path}: missing grid header")
    fields = dict(line.split(" ", 1) for line in
                  blob[:end].decode("utf-8").splitlines()[1:])
    r = int(fields["resolution"])
    lo, hi = (float(v) for v in fields["domain"].split())
    m = int(fields["samples"])
    payload = blob[end + len(b"end_header\n"):]
    n = r ** 3
    mean = np.frombuffer(payload, dtype="<f8", count=n).reshape(r, r, r)
    var = np.frombuffer(payload, dtype="<f8", count=n,
                        offset=n * 8).reshape(r, r, r)
    return UncertainSdfGrid(r, mean.astype(np.float64), var.astype(np.float64),
                            m, (lo, hi))


def save_histogram_csv(path, hist: SdfHistogram) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("bin_lo,bin_hi,count\n")
        for i, c in enumerate(hist.counts):
            f.write(f"{float(hist.bin_edges[i])!r},"
                    f"{float(hist.bin_edges[i + 1])!r},{int(c)}\n")
