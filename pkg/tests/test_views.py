"""Renderer and corruption protocol."""

import numpy as np
import pytest

from shapeuq import shapes, views


@pytest.fixture(scope="module")
def sphere_view_128():
    return views.render_view(shapes.sphere_spec(0.3), azimuth=0.7,
                             elevation=0.0, resolution=128)


class TestRenderer:
    def test_sphere_silhouette_area(self, sphere_view_128):
        px_area = (views.VIEW_SPAN / 128) ** 2
        area = sphere_view_128.silhouette.sum() * px_area
        expected = np.pi * 0.3 ** 2
        assert abs(area - expected) / expected < 0.02

    def test_sphere_silhouette_is_centered_disc(self, sphere_view_128):
        sil = sphere_view_128.silhouette
        px = views.VIEW_SPAN / 128
        cols = (np.arange(128) + 0.5 - 64) * px
        rows = (64 - np.arange(128) - 0.5) * px
        v, u = np.meshgrid(rows, cols, indexing="ij")
        r = np.hypot(u, v)
        assert np.all(sil[r < 0.28] == 1.0)
        assert np.all(sil[r > 0.32] == 0.0)

    def test_corner_pixel_empty(self):
        view = views.render_view(shapes.sphere_spec(0.25), 0.3, 0.2, 32)
        assert view.silhouette[0, 0] == 0.0
        assert view.depth[0, 0] == 0.0

    def test_depth_only_on_silhouette(self, sphere_view_128):
        sil = sphere_view_128.silhouette > 0.5
        depth = sphere_view_128.depth
        assert np.all(depth[sil] > 0.0)
        assert np.all(depth[~sil] == 0.0)

    def test_opposite_views_identical_silhouette(self):
        spec = shapes.make_family(4, seed=3)[2]
        a = views.render_view(spec, 0.9, 0.25, 32)
        b = views.render_view(spec, 0.9 + np.pi, 0.25, 32)
        np.testing.assert_array_equal(a.silhouette, b.silhouette)

    def test_deterministic(self):
        spec = shapes.make_family(1, seed=5)[0]
        a = views.render_view(spec, 1.1, 0.3, 32)
        b = views.render_view(spec, 1.1, 0.3, 32)
        np.testing.assert_array_equal(a.raster, b.raster)

    def test_hit_consistency(self):
        """Re-evaluating the SDF at every reconstructed hit point stays
        under the renderer's hit tolerance."""
        for spec in shapes.make_family(3, seed=9):
            view = views.render_view(spec, 0.5, 0.3, 32)
            pts = views.hit_points(view)
            sd = shapes.analytic_sdf(spec, pts)
            assert np.abs(sd).max() < 5e-3

    def test_depth_increases_toward_camera(self):
        # the near pole of the sphere is closer than the rim
        view = views.render_view(shapes.sphere_spec(0.3), 0.0, 0.0, 64)
        sil = view.silhouette > 0.5
        center_depth = view.depth[32, 32]
        rim_depths = view.depth[sil & (view.depth < center_depth)]
        assert center_depth == view.depth[sil].max()
        assert len(rim_depths) > 0


class TestCorruptCrop:
    def test_min_scale_one_is_identity(self):
        view = views.render_view(shapes.sphere_spec(0.3), 0.2, 0.1, 32)
        out = views.corrupt_crop(view, 1.0, seed=4)
        np.testing.assert_array_equal(out.raster, view.raster)
        assert out.corruption.realized_scale == 1.0
        assert out.corruption.kind == views.CORRUPTION_RANDOM_CROP

    def test_deterministic(self):
        view = views.render_view(shapes.sphere_spec(0.3), 0.2, 0.1, 32)
        a = views.corrupt_crop(view, 0.1, seed=11)
        b = views.corrupt_crop(view, 0.1, seed=11)
        np.testing.assert_array_equal(a.raster, b.raster)
        assert a.corruption == b.corruption

    def test_realized_scale_in_range(self):
        view = views.render_view(shapes.sphere_spec(0.3), 0.2, 0.1, 32)
        for seed in range(50):
            out = views.corrupt_crop(view, 0.3, seed=seed)
            assert 0.3 <= out.corruption.realized_scale <= 1.0 + 1e-12

    def test_mean_retained_fraction_orders_by_min_scale(self):
        view = views.render_view(shapes.sphere_spec(0.3), 0.2, 0.1, 32)

        def mean_retained(min_scale):
            vals = []
            for seed in range(1000):
                out = views.corrupt_crop(view, min_scale, seed=seed)
                vals.append(views.retained_silhouette_fraction(
                    view, out.corruption))
            return np.mean(vals)

        assert mean_retained(0.1) < mean_retained(0.8)

    def test_crop_removes_information_pre_resample(self):
        """Retained original silhouette pixels never exceed the original
        count (the resampled raster may duplicate pixels, so monotonicity
        is measured on the crop window)."""
        view = views.render_view(shapes.make_family(1, seed=2)[0], 0.4, 0.2,
                                 32)
        total = view.silhouette.sum()
        for seed in range(100):
            out = views.corrupt_crop(view, 0.2, seed=seed)
            frac = views.retained_silhouette_fraction(view, out.corruption)
            assert frac <= 1.0 + 1e-12
            assert frac * total <= total + 1e-9

    def test_bad_min_scale_rejected(self):
        view = views.render_view(shapes.sphere_spec(0.3), 0.0, 0.0, 32)
        for bad in (0.0, -0.5, 1.5):
            with pytest.raises(ValueError):
                views.corrupt_crop(view, bad, seed=0)


class TestFlip:
    def test_double_flip_identity(self):
        view = views.render_view(shapes.make_family(1, seed=8)[0], 0.3, 0.2,
                                 32)
        out = views.flip_horizontal(views.flip_horizontal(view))
        np.testing.assert_array_equal(out.raster, view.raster)


class TestDataset:
    def _family_with_codes(self):
        specs = shapes.make_family(4, seed=6)
        codebook = {s.instance_id: np.arange(3, dtype=float) + s.instance_id
                    for s in specs}
        return specs, codebook

    def test_counts(self):
        specs, codebook = self._family_with_codes()
        ds = views.make_view_dataset(specs, codebook, views_per_instance=10,
                                     seed=1)
        assert len(ds) == 40

    def test_codes_match_codebook(self):
        specs, codebook = self._family_with_codes()
        ds = views.make_view_dataset(specs, codebook, views_per_instance=3,
                                     seed=1)
        for view, code in zip(ds.views, ds.codes):
            np.testing.assert_array_equal(code, codebook[view.instance_id])

    def test_missing_codebook_entry_rejected(self):
        specs, codebook = self._family_with_codes()
        del codebook[2]
        with pytest.raises(KeyError):
            views.make_view_dataset(specs, codebook, views_per_instance=2,
                                    seed=0)

    def test_reproducible(self):
        specs, codebook = self._family_with_codes()
        a = views.make_view_dataset(specs, codebook, 4, seed=9)
        b = views.make_view_dataset(specs, codebook, 4, seed=9)
        for va, vb in zip(a.views, b.views):
            np.testing.assert_array_equal(va.raster, vb.raster)

    def test_save_load_round_trip(self, tmp_path):
        specs, codebook = self._family_with_codes()
        ds = views.make_view_dataset(specs, codebook, 3, seed=2)
        ds.views[1] = views.corrupt_crop(ds.views[1], 0.4, seed=5)
        views.save_view_dataset(tmp_path / "ds", ds)
        back = views.load_view_dataset(tmp_path / "ds")
        assert len(back) == len(ds)
        for (va, ca), (vb, cb) in zip(zip(ds.views, ds.codes),
                                      zip(back.views, back.codes)):
            np.testing.assert_array_equal(va.raster, vb.raster)
            np.testing.assert_array_equal(ca, cb)
            assert va.corruption == vb.corruption
            assert va.azimuth == vb.azimuth and va.elevation == vb.elevation
