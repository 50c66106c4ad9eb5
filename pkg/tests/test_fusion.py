"""Precision-weighted fusion: exactness, incremental equivalence, top-K."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapeuq import fusion
from shapeuq.latent import LatentGaussian


def random_observations(n, d, seed):
    rng = np.random.default_rng(seed)
    return [LatentGaussian(rng.normal(size=d),
                           rng.uniform(0.05, 4.0, size=d)) for _ in range(n)]


def dense_matrix_fusion(observations):
    """Independent oracle: full-matrix precision-weighted fusion with
    diagonal covariance matrices."""
    d = observations[0].dim
    info = np.zeros((d, d))
    vec = np.zeros(d)
    for obs in observations:
        cov_inv = np.linalg.inv(np.diag(obs.var))
        info += cov_inv
        vec += cov_inv @ obs.mean
    cov = np.linalg.inv(info)
    return cov @ vec, np.diag(cov)


class TestFuse:
    def test_identical_gaussians(self):
        obs = [LatentGaussian([1.0, -2.0], [0.5, 2.0])] * 5
        post = fusion.fuse(obs)
        np.testing.assert_allclose(post.mean, [1.0, -2.0], atol=1e-12)
        np.testing.assert_allclose(post.var, [0.1, 0.4], atol=1e-12)

    def test_symmetric_pair(self):
        post = fusion.fuse([LatentGaussian([0.0], [1.0]),
                            LatentGaussian([1.0], [1.0])])
        assert post.mean[0] == pytest.approx(0.5, abs=1e-15)
        assert post.var[0] == pytest.approx(0.5, abs=1e-15)

    def test_matches_dense_matrix_oracle(self):
        for seed in range(5):
            obs = random_observations(7, 6, seed)
            post = fusion.fuse(obs)
            mean_ref, var_ref = dense_matrix_fusion(obs)
            np.testing.assert_allclose(post.mean, mean_ref, atol=1e-12)
            np.testing.assert_allclose(post.var, var_ref, atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            fusion.fuse([])

    def test_mixed_dims_rejected(self):
        with pytest.raises(ValueError):
            fusion.fuse([LatentGaussian([0.0], [1.0]),
                         LatentGaussian([0.0, 1.0], [1.0, 1.0])])

    @settings(max_examples=40, deadline=None, derandomize=True)
    @given(seed=st.integers(0, 500), n=st.integers(1, 12))
    def test_fused_variance_below_min_input(self, seed, n):
        obs = random_observations(n, 4, seed)
        post = fusion.fuse(obs)
        min_var = np.min([o.var for o in obs], axis=0)
        assert np.all(post.var <= min_var + 1e-15)

    @settings(max_examples=40, deadline=None, derandomize=True)
    @given(seed=st.integers(0, 500), n=st.integers(1, 12))
    def test_fused_mean_is_convex_combination(self, seed, n):
        obs = random_observations(n, 4, seed)
        post = fusion.fuse(obs)
        means = np.stack([o.mean for o in obs])
        assert np.all(post.mean >= means.min(axis=0) - 1e-12)
        assert np.all(post.mean <= means.max(axis=0) + 1e-12)

    @settings(max_examples=30, deadline=None, derandomize=True)
    @given(seed=st.integers(0, 500))
    def test_permutation_invariance(self, seed):
        obs = random_observations(8, 5, seed)
        rng = np.random.default_rng(seed + 1)
        perm = [obs[i] for i in rng.permutation(8)]
        a, b = fusion.fuse(obs), fusion.fuse(perm)
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)
        np.testing.assert_allclose(a.var, b.var, atol=1e-12)

    @settings(max_examples=30, deadline=None, derandomize=True)
    @given(seed=st.integers(0, 500), c=st.floats(0.01, 100.0))
    def test_variance_scaling_consistency(self, seed, c):
        obs = random_observations(6, 3, seed)
        scaled = [LatentGaussian(o.mean, c * o.var) for o in obs]
        a, b = fusion.fuse(obs), fusion.fuse(scaled)
        np.testing.assert_allclose(b.mean, a.mean, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(b.var, c * a.var, rtol=1e-12)


class TestIncremental:
    def test_single_observation_is_identity(self):
        obs = LatentGaussian([0.3, -0.7], [0.9, 1.1])
        state = fusion.FusionState(dim=2)
        fusion.fuse_incremental(state, obs)
        post = state.posterior()
        np.testing.assert_allclose(post.mean, obs.mean, atol=1e-15)
        np.testing.assert_allclose(post.var, obs.var, atol=1e-15)

    def test_matches_batch_under_any_permutation(self):
        obs = random_observations(9, 4, seed=3)
        batch = fusion.fuse(obs)
        rng = np.random.default_rng(0)
        for _ in range(5):
            state = fusion.FusionState(dim=4)
            for i in rng.permutation(len(obs)):
                state.update(obs[i])
            post = state.posterior()
            np.testing.assert_allclose(post.mean, batch.mean, atol=1e-12)
            np.testing.assert_allclose(post.var, batch.var, atol=1e-12)

    def test_posterior_variance_non_increasing(self):
        obs = random_observations(12, 5, seed=8)
        state = fusion.FusionState(dim=5)
        prev = np.full(5, np.inf)
        for o in obs:
            state.update(o)
            var = state.posterior().var
            assert np.all(var <= prev + 1e-15)
            prev = var

    def test_log_retained_for_reselection(self):
        obs = random_observations(6, 3, seed=1)
        state = fusion.FusionState(dim=3)
        for o in obs:
            state.update(o)
        assert state.view_count == 6
        reselect = fusion.fuse_top_k([o for o, _ in state.log], 3)
        assert len(reselect[0]) == 3

    def test_empty_posterior_rejected(self):
        with pytest.raises(ValueError):
            fusion.FusionState(dim=2).posterior()


class TestTopK:
    def test_k_equals_n_matches_plain_fuse(self):
        obs = random_observations(10, 4, seed=5)
        _, post = fusion.fuse_top_k(obs, 10)
        ref = fusion.fuse(obs)
        np.testing.assert_allclose(post.mean, ref.mean, atol=1e-15)
        np.testing.assert_allclose(post.var, ref.var, atol=1e-15)

    def test_k_one_returns_lowest_trace_unchanged(self):
        obs = random_observations(10, 4, seed=6)
        traces = [o.trace() for o in obs]
        best = int(np.argmin(traces))
        selected, post = fusion.fuse_top_k(obs, 1)
        assert selected == [best]
        np.testing.assert_allclose(post.mean, obs[best].mean, atol=1e-15)
        np.testing.assert_allclose(post.var, obs[best].var, atol=1e-15)

    def test_selection_matches_sort_oracle(self):
        obs = random_observations(10, 4, seed=7)
        traces = np.array([o.trace() for o in obs])
        for k in range(1, 11):
            selected = fusion.select_lowest_trace(obs, k)
            oracle = sorted(np.argsort(traces, kind="stable")[:k])
            assert selected == [int(i) for i in oracle]

    def test_ties_broken_by_view_index(self):
        obs = [LatentGaussian([0.0], [1.0]) for _ in range(4)]
        assert fusion.select_lowest_trace(obs, 2) == [0, 1]

    def test_k_out_of_range(self):
        obs = random_observations(3, 2, seed=0)
        with pytest.raises(ValueError):
            fusion.select_lowest_trace(obs, 0)
        with pytest.raises(ValueError):
            fusion.select_lowest_trace(obs, 4)


class TestAverageBaseline:
    def test_equal_weight_mean(self):
        obs = [LatentGaussian([0.0, 2.0], [0.1, 0.1]),
               LatentGaussian([1.0, 0.0], [10.0, 10.0])]
        np.testing.assert_allclose(fusion.average_means(obs), [0.5, 1.0])


class TestTraceExport:
    def test_csv_layout(self, tmp_path):
        obs = random_observations(4, 3, seed=2)
        path = tmp_path / "trace.csv"
        fusion.save_fusion_trace_csv(path, obs, selected=[0, 2])
        lines = path.read_text().splitlines()
        assert lines[0] == "view,trace,selected,posterior_trace_after"
        assert len(lines) == 5
        flags = [int(line.split(",")[2]) for line in lines[1:]]
        assert flags == [1, 0, 1, 0]
        post_traces = [float(line.split(",")[3]) for line in lines[1:]]
        assert post_traces == sorted(post_traces, reverse=True)
