"""Backend parity: compiled Cython kernels against the numpy fallbacks."""

import numpy as np
import pytest

from shapeuq import shapes
from shapeuq.kernels import active_backend, get_backend
from shapeuq.propagation import grid_lattice

try:
    compiled = get_backend("compiled")
    HAS_COMPILED = True
except ImportError:
    HAS_COMPILED = False

pure = get_backend("pure")

needs_compiled = pytest.mark.skipif(not HAS_COMPILED,
                                    reason="compiled extension not built")


def sphere_grid(r):
    spec = shapes.sphere_spec(0.3)
    return shapes.analytic_sdf(spec, grid_lattice(r)).reshape(r, r, r)


class TestBackendSelection:
    def test_active_backend_reports(self):
        assert active_backend() in ("pure", "compiled")

    def test_pure_always_available(self):
        assert pure.BACKEND_NAME == "pure"


@needs_compiled
class TestMarchingCubesParity:
    def test_sphere_grid_identical(self):
        grid = sphere_grid(48)
        vp, tp = pure.marching_cubes_kernel(grid, 0.0, -0.5, 1.0 / 47)
        vc, tc = compiled.marching_cubes_kernel(grid, 0.0, -0.5, 1.0 / 47)
        assert np.array_equal(tp, tc)
        np.testing.assert_allclose(vp, vc, atol=1e-12)

    def test_family_shape_identical(self):
        spec = shapes.make_family(3, seed=4)[2]
        r = 40
        grid = shapes.analytic_sdf(spec, grid_lattice(r)).reshape(r, r, r)
        vp, tp = pure.marching_cubes_kernel(grid, 0.0, -0.5, 1.0 / (r - 1))
        vc, tc = compiled.marching_cubes_kernel(grid, 0.0, -0.5, 1.0 / (r - 1))
        assert np.array_equal(tp, tc)
        np.testing.assert_allclose(vp, vc, atol=1e-12)

    def test_empty_grid_identical(self):
        grid = np.ones((12, 12, 12))
        for backend in (pure, compiled):
            v, t = backend.marching_cubes_kernel(grid, 0.0, -0.5, 1.0 / 11)
            assert len(v) == 0 and len(t) == 0


@needs_compiled
class TestSdfKernelParity:
    def test_batch_values_close(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-0.8, 0.8, (5000, 3))
        for he, e in [((0.3, 0.3, 0.3), 2.0), ((0.4, 0.25, 0.3), 5.0),
                      ((0.26, 0.41, 0.33), 1.5)]:
            a = pure.superellipsoid_sdf_kernel(pts, *he, e)
            b = compiled.superellipsoid_sdf_kernel(pts, *he, e)
            np.testing.assert_allclose(a, b, atol=1e-12)


@needs_compiled
class TestSphereTraceParity:
    def test_hits_and_depths_match(self):
        rng = np.random.default_rng(1)
        origins = np.column_stack([
            np.full(500, 2.0),
            rng.uniform(-0.8, 0.8, 500),
            rng.uniform(-0.8, 0.8, 500),
        ])
        direction = np.array([-1.0, 0.0, 0.0])
        args = (0.35, 0.3, 0.28, 3.0, 4.0, 1e-3, 64)
        hp, tp = pure.sphere_trace_kernel(origins, direction, *args)
        hc, tc = compiled.sphere_trace_kernel(origins, direction, *args)
        assert np.array_equal(hp, hc)
        np.testing.assert_allclose(tp, tc, atol=1e-12)


@needs_compiled
class TestChamferParity:
    def test_terms_match(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(300, 3))
        b = rng.normal(size=(200, 3))
        pa = pure.chamfer_terms_kernel(a, b)
        ca = compiled.chamfer_terms_kernel(a, b)
        assert pa[0] == pytest.approx(ca[0], abs=1e-12)
        assert pa[1] == pytest.approx(ca[1], abs=1e-12)
