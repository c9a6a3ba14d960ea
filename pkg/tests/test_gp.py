import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_pair, sine_data
from lood.errors import ConfigError, DimensionMismatch
from lood.gp import Dataset, LeaveOneOutPair, PosteriorSummary, loo_pair_posteriors, posterior, predictive_sample
from lood.kernels import NngpFc, Rbf, kernel_matrix
from lood.linalg import is_psd


def direct_posterior(spec, data, q):
    """Independent path: explicit dense solve with numpy."""
    m = kernel_matrix(spec, data.features, data.features) + data.noise_variance * np.eye(data.n)
    k_qd = kernel_matrix(spec, q, data.features)
    mean = k_qd @ np.linalg.solve(m, data.labels)
    cov = kernel_matrix(spec, q, q) - k_qd @ np.linalg.solve(m, k_qd.T)
    return mean, cov


class TestDataset:
    def test_rejects_nan(self):
        with pytest.raises(ConfigError):
            Dataset(np.array([[np.nan]]), np.array([1.0]), 0.01)

    def test_rejects_small_noise(self):
        with pytest.raises(ConfigError):
            Dataset(np.zeros((1, 1)), np.zeros(1), 1e-13)

    def test_label_count(self):
        with pytest.raises(DimensionMismatch):
            Dataset(np.zeros((2, 1)), np.zeros(3), 0.01)

    def test_pair_dimension(self):
        with pytest.raises(DimensionMismatch):
            LeaveOneOutPair(Dataset(np.zeros((2, 2)), np.zeros(2), 0.01), [[1.0]], [0.0])

    def test_augmented(self):
        data = Dataset(np.zeros((2, 1)), np.zeros(2), 0.01)
        pair = LeaveOneOutPair(data, [[1.0]], [2.0])
        assert pair.augmented.n == 3 and pair.augmented.labels[-1] == 2.0


class TestPosterior:
    def test_empty_is_prior(self):
        post = posterior(Rbf(), Dataset(np.zeros((0, 1)), np.zeros(0), 0.01), [[0.3]])
        np.testing.assert_array_equal(post.mean, [0.0])
        np.testing.assert_array_equal(post.covariance, [[1.0]])

    def test_single_point_closed_form(self):
        post = posterior(Rbf(), Dataset([[0.5]], [2.0], 0.01), [[0.5]])
        assert post.mean[0] == pytest.approx(2.0 / 1.01, rel=1e-14)
        assert post.covariance[0, 0] == pytest.approx(0.01 / 1.01, rel=1e-10)

    def test_identical_queries_rank_one(self):
        post = posterior(Rbf(), sine_data(), [[0.7], [0.7]])
        assert np.ptp(post.covariance) <= 1e-15

    def test_matches_direct(self, rng):
        data = Dataset(rng.normal(size=(8, 2)), rng.normal(size=8), 0.05)
        q = rng.normal(size=(3, 2))
        post = posterior(Rbf(), data, q)
        mean, cov = direct_posterior(Rbf(), data, q)
        np.testing.assert_allclose(post.mean, mean, atol=1e-12)
        np.testing.assert_allclose(post.covariance, cov, atol=1e-12)
        assert is_psd(post.covariance, tol=1e-8)


class TestLooPairPosteriors:
    def test_duplicate_record(self):
        data = sine_data()
        pair = LeaveOneOutPair(data, data.features[:1], data.labels[:1])
        post_d, post_dp = loo_pair_posteriors(Rbf(), pair, data.features[:1])
        mean_d, _ = direct_posterior(Rbf(), data, data.features[:1])
        mean_dp, _ = direct_posterior(Rbf(), pair.augmented, data.features[:1])
        assert post_d.mean[0] == pytest.approx(mean_d[0], abs=1e-12)
        assert post_dp.mean[0] == pytest.approx(mean_dp[0], abs=1e-12)
        assert abs(post_d.mean[0] - post_dp.mean[0]) <= 2 * data.noise_variance

    def test_empty_base_scalar(self):
        pair = LeaveOneOutPair(Dataset(np.zeros((0, 1)), np.zeros(0), 0.01), [[0.0]], [1.0])
        post_d, post_dp = loo_pair_posteriors(Rbf(), pair, [[0.0]])
        assert (post_d.mean[0], post_d.covariance[0, 0]) == (0.0, 1.0)
        assert post_dp.mean[0] == pytest.approx(1 / 1.01, rel=1e-14)
        assert post_dp.covariance[0, 0] == pytest.approx(0.01 / 1.01, rel=1e-10)

    def test_unknown_method(self):
        pair = LeaveOneOutPair(sine_data(), [[0.0]], [0.0])
        with pytest.raises(ConfigError):
            loo_pair_posteriors(Rbf(), pair, [[0.0]], method="magic")

    @pytest.mark.parametrize("spec", [Rbf(1.0), Rbf(0.2), NngpFc(2)], ids=repr)
    def test_block_equals_direct(self, spec):
        rng = np.random.default_rng(31)
        for _ in range(30):
            pair = random_pair(rng, d=2)
            q = rng.normal(size=(3, 2))
            b_d, b_dp = loo_pair_posteriors(spec, pair, q, "block")
            d_d, d_dp = loo_pair_posteriors(spec, pair, q, "direct")
            assert np.max(np.abs(b_dp.mean - d_dp.mean)) <= 1e-10
            assert np.max(np.abs(b_dp.covariance - d_dp.covariance)) <= 1e-10
            np.testing.assert_array_equal(b_d.mean, d_d.mean)


class TestPredictiveSample:
    def test_degenerate(self):
        s = predictive_sample(PosteriorSummary(np.array([2.0]), np.zeros((1, 1))), 100, 0)
        assert np.max(np.abs(s - 2.0)) <= 1e-4

    def test_moments(self):
        s = predictive_sample(PosteriorSummary(np.zeros(1), np.eye(1)), 10**5, 3)
        assert abs(s.mean()) <= 0.02 and abs(s.var() - 1) <= 0.03

    def test_deterministic(self):
        summary = PosteriorSummary(np.array([0.0, 1.0]), np.array([[1.0, 0.5], [0.5, 2.0]]))
        np.testing.assert_array_equal(predictive_sample(summary, 10, 9), predictive_sample(summary, 10, 9))

    def test_count(self):
        with pytest.raises(ConfigError):
            predictive_sample(PosteriorSummary(np.zeros(1), np.eye(1)), 0, 0)


class TestProperties:
    @settings(max_examples=500, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_variance_shrinks_with_data(self, seed):
        rng = np.random.default_rng(seed)
        pair = random_pair(rng)
        q = rng.normal(size=(1, pair.base.dim))
        post_d, post_dp = loo_pair_posteriors(Rbf(float(rng.uniform(0.2, 3))), pair, q)
        assert post_dp.covariance[0, 0] <= post_d.covariance[0, 0] + 1e-10

    def test_interpolation_at_small_noise(self):
        x = np.linspace(-3, 3, 7)[:, None]
        data = Dataset(x, np.sin(x[:, 0]), 1e-10)
        post = posterior(Rbf(1.0), data, x)
        np.testing.assert_allclose(post.mean, data.labels, rtol=1e-4, atol=1e-8)
