# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels: marching cubes, sphere tracing, brute-force chamfer.

Arithmetic mirrors shapeuq.kernels.pure step for step (the build disables
FP contraction) so both backends agree to float rounding.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, pow, sqrt

cnp.import_array()

from .._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE

BACKEND_NAME = "compiled"

cdef int[:, ::1] _CORNERS = np.ascontiguousarray(CORNER_OFFSETS, dtype=np.int32)
cdef int[:, ::1] _EDGES = np.ascontiguousarray(EDGE_CORNERS, dtype=np.int32)
cdef int[::1] _EDGE_TABLE = np.ascontiguousarray(EDGE_TABLE, dtype=np.int32)
cdef int[:, ::1] _TRI_TABLE = np.ascontiguousarray(TRI_TABLE, dtype=np.int32)


def marching_cubes_kernel(grid, double iso, double origin, double spacing):
    """See shapeuq.kernels.pure.marching_cubes_kernel."""
    cdef double[:, :, ::1] g = np.ascontiguousarray(grid, dtype=np.float64)
    cdef Py_ssize_t r = g.shape[0]
    if g.shape[1] != r or g.shape[2] != r:
        raise ValueError("grid must be cubic")
    cdef Py_ssize_t n = r - 1

    cdef cnp.ndarray[cnp.int64_t, ndim=4] slot_arr = np.full((3, r, r, r), -1,
                                                             dtype=np.int64)
    cdef long long[:, :, :, ::1] slot = slot_arr

    cdef Py_ssize_t cap_v = 4096, cap_t = 4096
    cdef cnp.ndarray[cnp.float64_t, ndim=2] verts = np.empty((cap_v, 3))
    cdef cnp.ndarray[cnp.int64_t, ndim=2] tris = np.empty((cap_t, 3),
                                                          dtype=np.int64)
    cdef Py_ssize_t n_v = 0, n_t = 0

    cdef Py_ssize_t ci, cj, ck, e, t
    cdef int cell_case, edge_mask, ca, cb, axis
    cdef Py_ssize_t ax, ay, az, bx, by, bz, lx, ly, lz
    cdef long long idx, i0, i1, i2
    cdef double va, vb, denom, mu
    cdef long long edge_vertex[12]

    for ci in range(n):
        for cj in range(n):
            for ck in range(n):
                cell_case = 0
                for e in range(8):
                    if g[ci + _CORNERS[e, 0], cj + _CORNERS[e, 1],
                         ck + _CORNERS[e, 2]] < iso:
                        cell_case |= 1 << e
                if cell_case == 0 or cell_case == 255:
                    continue
                edge_mask = _EDGE_TABLE[cell_case]
                for e in range(12):
                    edge_vertex[e] = -1
                    if not edge_mask & (1 << e):
                        continue
                    ca = _EDGES[e, 0]
                    cb = _EDGES[e, 1]
                    ax = ci + _CORNERS[ca, 0]
                    ay = cj + _CORNERS[ca, 1]
                    az = ck + _CORNERS[ca, 2]
                    bx = ci + _CORNERS[cb, 0]
                    by = cj + _CORNERS[cb, 1]
                    bz = ck + _CORNERS[cb, 2]
                    axis = 0 if ax != bx else (1 if ay != by else 2)
                    lx = ax if ax < bx else bx
                    ly = ay if ay < by else by
                    lz = az if az < bz else bz
                    idx = slot[axis, lx, ly, lz]
                    if idx < 0:
                        va = g[ax, ay, az]
                        vb = g[bx, by, bz]
                        denom = vb - va
                        mu = 0.0 if denom == 0.0 else (iso - va) / denom
                        if n_v == cap_v:
                            cap_v *= 2
                            verts = _grow_f64(verts, cap_v)
                        verts[n_v, 0] = origin + spacing * (ax + mu * (bx - ax))
                        verts[n_v, 1] = origin + spacing * (ay + mu * (by - ay))
                        verts[n_v, 2] = origin + spacing * (az + mu * (bz - az))
                        idx = n_v
                        n_v += 1
                        slot[axis, lx, ly, lz] = idx
                    edge_vertex[e] = idx
                for t in range(0, 16, 3):
                    if _TRI_TABLE[cell_case, t] < 0:
                        break
                    # reversed winding so normals point toward positive values
                    i0 = edge_vertex[_TRI_TABLE[cell_case, t]]
                    i1 = edge_vertex[_TRI_TABLE[cell_case, t + 2]]
                    i2 = edge_vertex[_TRI_TABLE[cell_case, t + 1]]
                    if i0 == i1 or i1 == i2 or i0 == i2:
                        continue
                    if n_t == cap_t:
                        cap_t *= 2
                        tris = _grow_i64(tris, cap_t)
                    tris[n_t, 0] = i0
                    tris[n_t, 1] = i1
                    tris[n_t, 2] = i2
                    n_t += 1

    return verts[:n_v].copy(), tris[:n_t].copy()


cdef cnp.ndarray[cnp.float64_t, ndim=2] _grow_f64(
        cnp.ndarray[cnp.float64_t, ndim=2] a, Py_ssize_t cap):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((cap, a.shape[1]))
    out[:a.shape[0]] = a
    return out


cdef cnp.ndarray[cnp.int64_t, ndim=2] _grow_i64(
        cnp.ndarray[cnp.int64_t, ndim=2] a, Py_ssize_t cap):
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out = np.empty((cap, a.shape[1]),
                                                         dtype=np.int64)
    out[:a.shape[0]] = a
    return out


cdef inline double _se_sdf(double x, double y, double z, double hx,
                           double hy, double hz, double e) nogil:
    cdef double ux = fabs(x) / hx
    cdef double uy = fabs(y) / hy
    cdef double uz = fabs(z) / hz
    cdef double w = pow(ux, e) + pow(uy, e) + pow(uz, e)
    cdef double g, cx, cy, cz, norm, m
    if w <= 1e-12:
        m = hx if hx < hy else hy
        if hz < m:
            m = hz
        return -m
    g = pow(w, 1.0 / e)
    cx = (pow(ux, e - 1.0) if ux > 0.0 else 0.0) / hx
    cy = (pow(uy, e - 1.0) if uy > 0.0 else 0.0) / hy
    cz = (pow(uz, e - 1.0) if uz > 0.0 else 0.0) / hz
    norm = sqrt(cx * cx + cy * cy + cz * cz)
    return (g - 1.0) * pow(g, e - 1.0) / norm


def superellipsoid_sdf_kernel(points, double hx, double hy, double hz,
                              double exponent):
    cdef double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _se_sdf(p[i, 0], p[i, 1], p[i, 2], hx, hy, hz, exponent)
    return out


def sphere_trace_kernel(origins, direction, double hx, double hy, double hz,
                        double exponent, double t_max, double hit_eps,
                        int max_steps):
    cdef double[:, ::1] o = np.ascontiguousarray(origins, dtype=np.float64)
    cdef double[::1] d = np.ascontiguousarray(direction, dtype=np.float64)
    cdef Py_ssize_t n = o.shape[0], i
    cdef int step
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] hit_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] t_arr = np.zeros(n)
    cdef cnp.uint8_t[::1] hit = hit_arr
    cdef double[::1] t = t_arr
    cdef double ti, dist, dx, dy, dz

    dx = d[0]
    dy = d[1]
    dz = d[2]
    with nogil:
        for i in range(n):
            ti = 0.0
            for step in range(max_steps):
                dist = _se_sdf(o[i, 0] + ti * dx, o[i, 1] + ti * dy,
                               o[i, 2] + ti * dz, hx, hy, hz, exponent)
                if dist < hit_eps:
                    hit[i] = 1
                    break
                ti += dist
                if ti > t_max:
                    break
            t[i] = ti if hit[i] else 0.0
    return hit_arr.astype(bool), t_arr


def chamfer_terms_kernel(a, b):
    cdef double[:, ::1] pa = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[:, ::1] pb = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t na = pa.shape[0], nb = pb.shape[0], i, j
    cdef double best, dx, dy, dz, d2, acc_ab = 0.0, acc_ba = 0.0
    with nogil:
        for i in range(na):
            best = 1e300
            for j in range(nb):
                dx = pa[i, 0] - pb[j, 0]
                dy = pa[i, 1] - pb[j, 1]
                dz = pa[i, 2] - pb[j, 2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 < best:
                    best = d2
            acc_ab += sqrt(best)
        for j in range(nb):
            best = 1e300
            for i in range(na):
                dx = pa[i, 0] - pb[j, 0]
                dy = pa[i, 1] - pb[j, 1]
                dz = pa[i, 2] - pb[j, 2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 < best:
                    best = d2
            acc_ba += sqrt(best)
    return acc_ab / na, acc_ba / nb
