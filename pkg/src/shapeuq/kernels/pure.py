"""Pure-numpy fallbacks for the compiled kernels.

Same contracts and (up to float rounding) same results as
``shapeuq.kernels._compiled``; selected automatically when the extension is
unavailable or when SHAPEUQ_PURE=1.
"""

from __future__ import annotations

import numpy as np

from .._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE

BACKEND_NAME = "pure"


def marching_cubes_kernel(grid: np.ndarray, iso: float, origin: float,
                          spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Polygonize the iso level of grid[i, j, k] -> value at
    (origin + i*h, origin + j*h, origin + k*h).

    Returns (vertices (V, 3) float64, triangles (T, 3) int64).  Vertices on
    shared cell edges are emitted once; triangle winding follows the case
    tables.  Zero-area triangles (two coincident edge vertices) are skipped.
    """
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    r = grid.shape[0]
    if grid.shape != (r, r, r):
        raise ValueError(f"grid must be cubic, got {grid.shape}")

    below = grid < iso
    n = r - 1
    case = np.zeros((n, n, n), dtype=np.int32)
    for bit, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        case |= below[dx:dx + n, dy:dy + n, dz:dz + n].astype(np.int32) << bit
    active = np.argwhere((case != 0) & (case != 255))

    # one dedup slot per lattice edge: edge_slot[axis][i, j, k] is the index
    # of the vertex on the +axis edge leaving lattice point (i, j, k)
    edge_slot = [np.full((r, r, r), -1, dtype=np.int64) for _ in range(3)]
    verts: list[tuple[float, float, float]] = []
    tris: list[tuple[int, int, int]] = []

    edge_corners = EDGE_CORNERS.tolist()
    corner_offsets = CORNER_OFFSETS.tolist()

    for ci, cj, ck in active:
        cell_case = int(case[ci, cj, ck])
        edge_mask = int(EDGE_TABLE[cell_case])
        edge_vertex = [-1] * 12
        for e in range(12):
            if not edge_mask & (1 << e):
                continue
            ca, cb = edge_corners[e]
            oa, ob = corner_offsets[ca], corner_offsets[cb]
            ax, ay, az = ci + oa[0], cj + oa[1], ck + oa[2]
            bx, by, bz = ci + ob[0], cj + ob[1], ck + ob[2]
            axis = 0 if ax != bx else (1 if ay != by else 2)
            # canonical low corner of the edge
            lx, ly, lz = min(ax, bx), min(ay, by), min(az, bz)
            slot = edge_slot[axis]
            idx = slot[lx, ly, lz]
            if idx < 0:
                va = grid[ax, ay, az]
                vb = grid[bx, by, bz]
                denom = vb - va
                mu = 0.0 if denom == 0.0 else (iso - va) / denom
                px = origin + spacing * (ax + mu * (bx - ax))
                py = origin + spacing * (ay + mu * (by - ay))
                pz = origin + spacing * (az + mu * (bz - az))
                idx = len(verts)
                verts.append((px, py, pz))
                slot[lx, ly, lz] = idx
            edge_vertex[e] = idx
        row = TRI_TABLE[cell_case]
        for t in range(0, 16, 3):
            if row[t] < 0:
                break
            # reversed winding so normals point toward positive values
            i0 = edge_vertex[row[t]]
            i1 = edge_vertex[row[t + 2]]
            i2 = edge_vertex[row[t + 1]]
            if i0 == i1 or i1 == i2 or i0 == i2:
                continue
            tris.append((i0, i1, i2))

    vertices = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    triangles = np.asarray(tris, dtype=np.int64).reshape(-1, 3)
    return vertices, triangles


def superellipsoid_sdf_kernel(points: np.ndarray, hx: float, hy: float,
                              hz: float, exponent: float) -> np.ndarray:
    """Batch first-order signed-distance bound used by the ray marcher.

    Never overestimates the true distance outside the surface (convexity of
    the scaled e-norm), which is what makes plain distance stepping safe.
    """
    p = np.asarray(points, dtype=np.float64)
    he = np.array([hx, hy, hz])
    e = exponent
    u = np.abs(p) / he
    w = (u ** e).sum(axis=1)
    g = w ** (1.0 / e)
    comp = np.where(u > 0.0, u ** (e - 1.0), 0.0) / he
    norm = np.sqrt((comp * comp).sum(axis=1))
    d = np.empty(len(p))
    at_origin = w <= 1e-12
    ok = ~at_origin
    d[ok] = (g[ok] - 1.0) * (g[ok] ** (e - 1.0)) / norm[ok]
    d[at_origin] = -min(hx, hy, hz)
    return d


def sphere_trace_kernel(origins: np.ndarray, direction: np.ndarray,
                        hx: float, hy: float, hz: float, exponent: float,
                        t_max: float, hit_eps: float, max_steps: int
                        ) -> tuple[np.ndarray, np.ndarray]:
    """March every ray origin along one shared direction against the
    superellipsoid.  Returns (hit (N,) bool, t_hit (N,) float64, 0 where
    missed)."""
    origins = np.asarray(origins, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    n = len(origins)
    t = np.zeros(n)
    hit = np.zeros(n, dtype=bool)
    alive = np.ones(n, dtype=bool)
    for _ in range(max_steps):
        if not alive.any():
            break
        idx = np.flatnonzero(alive)
        p = origins[idx] + t[idx, None] * direction
        d = superellipsoid_sdf_kernel(p, hx, hy, hz, exponent)
        newly_hit = d < hit_eps
        hit[idx[newly_hit]] = True
        alive[idx[newly_hit]] = False
        adv = idx[~newly_hit]
        t[adv] += d[~newly_hit]
        overran = t[adv] > t_max
        alive[adv[overran]] = False
    t_out = np.where(hit, t, 0.0)
    return hit, t_out


def chamfer_terms_kernel(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Mean nearest-neighbour distance a->b and b->a (brute force)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    ab = float(np.sqrt(d2.min(axis=1)).mean())
    ba = float(np.sqrt(d2.min(axis=0)).mean())
    return ab, ba
