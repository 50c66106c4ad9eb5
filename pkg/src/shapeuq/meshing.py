"""Iso-surface extraction and uncertainty-decorated mesh export.

Marching cubes runs on the MEAN SDF field only; per-vertex uncertainty is a
decoration channel and never perturbs geometry.  Meshes are exported as
binary little-endian PLY with double-precision coordinates, a per-vertex
``uncertainty`` scalar, and RGB derived from the per-mesh relative
(min-max normalized) uncertainty.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import propagation
from .kernels import marching_cubes_kernel

GRID_DOMAIN = (-0.5, 0.5)


@dataclass
class UncertainMesh:
    vertices: np.ndarray          # (V, 3) float64, world coordinates
    triangles: np.ndarray         # (T, 3) int64
    vertex_sigma: np.ndarray = None  # (V,) float64, standard deviations

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.vertex_sigma is None:
            self.vertex_sigma = np.zeros(len(self.vertices))
        self.vertex_sigma = np.asarray(self.vertex_sigma, dtype=np.float64)
        if len(self.vertex_sigma) != len(self.vertices):
            raise ValueError("vertex_sigma length != vertex count")
        if len(self.triangles) and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index out of range")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def triangle_areas(self) -> np.ndarray:
        p0 = self.vertices[self.triangles[:, 0]]
        p1 = self.vertices[self.triangles[:, 1]]
        p2 = self.vertices[self.triangles[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(p1 - p0, p2 - p0), axis=1)

    def surface_area(self) -> float:
        return float(self.triangle_areas().sum())


def grid_coordinates(resolution: int) -> np.ndarray:
    """Lattice coordinates along one axis of the [-0.5, 0.5]^3 grid."""
    return np.linspace(GRID_DOMAIN[0], GRID_DOMAIN[1], resolution)


def marching_cubes(grid_mean: np.ndarray, iso: float = 0.0) -> UncertainMesh:
    """Extract the iso surface of a cubic grid spanning [-0.5, 0.5]^3.

    A grid that never crosses the iso level yields an empty mesh.
    """
    grid_mean = np.asarray(grid_mean, dtype=np.float64)
    r = grid_mean.shape[0]
    if grid_mean.shape != (r, r, r) or r < 2:
        raise ValueError(f"expected cubic grid with R >= 2, got {grid_mean.shape}")
    spacing = (GRID_DOMAIN[1] - GRID_DOMAIN[0]) / (r - 1)
    verts, tris = marching_cubes_kernel(grid_mean, iso, GRID_DOMAIN[0], spacing)
    if len(tris) == 0:
        return UncertainMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    # drop numerically degenerate triangles the index filter missed
    mesh = UncertainMesh(verts, tris)
    keep = mesh.triangle_areas() > 1e-12
    return UncertainMesh(verts, tris[keep])


def attach_uncertainty(mesh: UncertainMesh, decoder, latent, m_samples: int,
                       seed: int) -> UncertainMesh:
    """Per-vertex standard deviation from Monte-Carlo code propagation."""
    if mesh.n_vertices == 0:
        return UncertainMesh(mesh.vertices, mesh.triangles)
    sigma = propagation.propagate_vertices(decoder, latent, mesh.vertices,
                                           m_samples, seed)
    return UncertainMesh(mesh.vertices, mesh.triangles, sigma)


def relative_uncertainty_colors(sigma: np.ndarray) -> np.ndarray:
    """Min-max normalized sigma mapped to a blue-to-red ramp, uint8 RGB."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if len(sigma) == 0:
        return np.zeros((0, 3), dtype=np.uint8)
    lo, hi = sigma.min(), sigma.max()
    rel = np.zeros_like(sigma) if hi - lo <= 0 else (sigma - lo) / (hi - lo)
    rgb = np.empty((len(sigma), 3), dtype=np.uint8)
    rgb[:, 0] = np.round(255 * rel)
    rgb[:, 1] = 0
    rgb[:, 2] = np.round(255 * (1.0 - rel))
    return rgb


_PLY_VERTEX_STRUCT = struct.Struct("<ddddBBB")
_PLY_FACE_STRUCT = struct.Struct("<Biii")


def export_ply(mesh: UncertainMesh, path) -> None:
    """Binary little-endian PLY with double coordinates, an ``uncertainty``
    vertex property, and RGB from the relative uncertainty ramp."""
    colors = relative_uncertainty_colors(mesh.vertex_sigma)
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property double x\n"
        "property double y\n"
        "property double z\n"
        "property double uncertainty\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        f"element face {len(mesh.triangles)}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    try:
        with open(path, "wb") as f:
            f.write(header.encode("ascii"))
            for i in range(mesh.n_vertices):
                x, y, z = mesh.vertices[i]
                f.write(_PLY_VERTEX_STRUCT.pack(x, y, z, mesh.vertex_sigma[i],
                                                *colors[i]))
            for tri in mesh.triangles:
                f.write(_PLY_FACE_STRUCT.pack(3, *map(int, tri)))
    except OSError as exc:
        raise OSError(f"PLY export to {path} failed: {exc}") from exc


def import_ply(path) -> UncertainMesh:
    """Read a PLY written by export_ply (bit-exact round trip)."""
    with open(path, "rb") as f:
        blob = f.read()
    end = blob.find(b"end_header\n")
    if end < 0:
        raise ValueError(f"{path}: not a PLY file")
    header_lines = blob[:end].decode("ascii").splitlines()
    if header_lines[0] != "ply":
        raise ValueError(f"{path}: not a PLY file")
    n_vertex = n_face = 0
    for line in header_lines:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n_vertex = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            n_face = int(parts[2])
    offset = end + len(b"end_header\n")
    verts = np.empty((n_vertex, 3))
    sigma = np.empty(n_vertex)
    for i in range(n_vertex):
        x, y, z, u, *_ = _PLY_VERTEX_STRUCT.unpack_from(blob, offset)
        verts[i] = (x, y, z)
        sigma[i] = u
        offset += _PLY_VERTEX_STRUCT.size
    tris = np.empty((n_face, 3), dtype=np.int64)
    for i in range(n_face):
        count, a, b, c = _PLY_FACE_STRUCT.unpack_from(blob, offset)
        if count != 3:
            raise ValueError(f"{path}: non-triangular face")
        tris[i] = (a, b, c)
        offset += _PLY_FACE_STRUCT.size
    return UncertainMesh(verts, tris, sigma)


def export_obj(mesh: UncertainMesh, path) -> None:
    """OBJ export (geometry only; OBJ has no standard scalar channel)."""
    with open(path, "w", encoding="ascii") as f:
        for x, y, z in mesh.vertices:
            f.write(f"v {float(x)!r} {float(y)!r} {float(z)!r}\n")
        for a, b, c in mesh.triangles:
            f.write(f"f {a + 1} {b + 1} {c + 1}\n")


def sample_surface_points(mesh: UncertainMesh, count: int, seed: int
                          ) -> np.ndarray:
    """Area-uniform surface samples (triangle pick by area, then uniform
    barycentric point via the sqrt trick)."""
    if len(mesh.triangles) == 0:
        raise ValueError("cannot sample an empty mesh")
    rng = np.random.default_rng(seed)
    areas = mesh.triangle_areas()
    probs = areas / areas.sum()
    tri_idx = rng.choice(len(mesh.triangles), size=count, p=probs)
    p0 = mesh.vertices[mesh.triangles[tri_idx, 0]]
    p1 = mesh.vertices[mesh.triangles[tri_idx, 1]]
    p2 = mesh.vertices[mesh.triangles[tri_idx, 2]]
    r1 = np.sqrt(rng.uniform(size=(count, 1)))
    r2 = rng.uniform(size=(count, 1))
    return (1 - r1) * p0 + r1 * (1 - r2) * p1 + r1 * r2 * p2
