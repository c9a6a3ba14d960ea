import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lood.errors import DimensionMismatch, NotPsd, SingularSchur
from lood.linalg import (
    JitterPolicy,
    block_inverse,
    cholesky_psd,
    is_psd,
    logdet_psd,
    solve_psd,
    symmetrize,
)


def random_psd(rng, n, rank=None):
    x = rng.normal(size=(n, rank or n))
    return x @ x.T


def cofactor_det(m):
    """Laplace expansion along the first row; independent of any factorization."""
    n = m.shape[0]
    if n == 1:
        return m[0, 0]
    total = 0.0
    for j in range(n):
        minor = np.delete(np.delete(m, 0, axis=0), j, axis=1)
        total += (-1) ** j * m[0, j] * cofactor_det(minor)
    return total


class TestCholeskyPsd:
    def test_identity(self):
        f = cholesky_psd(np.eye(3))
        np.testing.assert_array_equal(f.lower, np.eye(3))
        assert f.jitter == 0.0

    def test_scalar(self):
        f = cholesky_psd(np.array([[4.0]]))
        np.testing.assert_allclose(f.lower, [[2.0]])

    def test_gram_reconstruction(self, rng):
        m = random_psd(rng, 5)
        f = cholesky_psd(m)
        assert np.max(np.abs(f.lower @ f.lower.T - m)) <= 1e-10

    def test_rank_deficient_gets_jitter(self, rng):
        m = random_psd(rng, 6, rank=2)
        f = cholesky_psd(m)
        assert f.jitter in [lvl * np.max(np.diag(m)) for lvl in JitterPolicy().levels]
        np.testing.assert_allclose(f.lower @ f.lower.T, m + f.jitter * np.eye(6), atol=1e-10 * np.abs(m).max())

    def test_zero_matrix_factorizes_with_jitter(self):
        f = cholesky_psd(np.zeros((2, 2)))
        assert f.jitter > 0

    def test_indefinite_raises(self):
        with pytest.raises(NotPsd):
            cholesky_psd(np.diag([1.0, -1.0]))

    def test_non_square_raises(self):
        with pytest.raises(DimensionMismatch):
            cholesky_psd(np.ones((2, 3)))

    def test_empty(self):
        assert cholesky_psd(np.zeros((0, 0))).n == 0


class TestSolvePsd:
    def test_identity(self, rng):
        b = rng.normal(size=(3, 2))
        np.testing.assert_array_equal(solve_psd(cholesky_psd(np.eye(3)), b), b)

    def test_scalar(self):
        np.testing.assert_allclose(solve_psd(cholesky_psd(np.array([[4.0]])), np.array([8.0])), [2.0])

    def test_residual(self, rng):
        m = random_psd(rng, 6) + 0.1 * np.eye(6)
        b = rng.normal(size=(6, 3))
        x = solve_psd(cholesky_psd(m), b)
        assert np.max(np.abs(m @ x - b)) <= 1e-8 * np.max(np.abs(b))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            solve_psd(cholesky_psd(np.eye(3)), np.ones(2))


class TestLogdetPsd:
    def test_identity(self):
        assert logdet_psd(cholesky_psd(np.eye(4))) == 0.0

    def test_diagonal(self):
        assert logdet_psd(cholesky_psd(np.diag([2.0, 8.0]))) == pytest.approx(np.log(16.0), rel=1e-14)

    def test_matches_cofactor_oracle(self, rng):
        m = random_psd(rng, 4) + 0.5 * np.eye(4)
        assert logdet_psd(cholesky_psd(m)) == pytest.approx(np.log(cofactor_det(m)), rel=1e-8)


class TestBlockInverse:
    def test_block_diagonal(self):
        res = block_inverse(np.eye(2), np.zeros(2), 2.0)
        np.testing.assert_allclose(res.inverse, np.diag([1.0, 1.0, 0.5]))
        assert res.alpha == 2.0

    def test_two_by_two(self):
        # direct inverse of [[1, .5], [.5, 1]] is [[1, -.5], [-.5, 1]] / 0.75
        res = block_inverse(np.eye(1), np.array([0.5]), 1.0)
        assert res.alpha == pytest.approx(0.75)
        np.testing.assert_allclose(res.inverse, np.array([[1.0, -0.5], [-0.5, 1.0]]) / 0.75, atol=1e-15)

    def test_matches_direct_inverse(self, rng):
        full = random_psd(rng, 5) + 0.1 * np.eye(5)
        res = block_inverse(np.linalg.inv(full[:4, :4]), full[:4, 4], full[4, 4])
        assert np.max(np.abs(res.inverse - np.linalg.inv(full))) <= 1e-8

    def test_empty_top_block(self):
        res = block_inverse(np.zeros((0, 0)), np.zeros(0), 4.0)
        np.testing.assert_allclose(res.inverse, [[0.25]])

    def test_singular_schur(self):
        with pytest.raises(SingularSchur):
            block_inverse(np.eye(1), np.array([1.0]), 1.0)


class TestIsPsd:
    def test_identity(self):
        assert is_psd(np.eye(3))

    def test_indefinite(self):
        assert not is_psd(np.diag([1.0, -1.0]))

    def test_rbf_posterior_covariance(self, rng):
        from lood.kernels import Rbf, kernel_matrix

        x, q = rng.normal(size=(6, 2)), rng.normal(size=(4, 2))
        m = kernel_matrix(Rbf(1.0), x, x) + 0.01 * np.eye(6)
        k_qd = kernel_matrix(Rbf(1.0), q, x)
        assert is_psd(kernel_matrix(Rbf(1.0), q, q) - k_qd @ np.linalg.solve(m, k_qd.T))


class TestProperties:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 10), st.integers(0, 2**32 - 1))
    def test_block_inverse_equals_direct(self, n, seed):
        rng = np.random.default_rng(seed)
        full = random_psd(rng, n + 1) + 0.1 * np.eye(n + 1)
        res = block_inverse(np.linalg.inv(full[:n, :n]), full[:n, n], full[n, n])
        assert np.max(np.abs(res.inverse - np.linalg.inv(full))) <= 1e-8

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_factor_reconstructs(self, n, rank, seed):
        m = random_psd(np.random.default_rng(seed), n, rank)
        f = cholesky_psd(m)
        err = np.max(np.abs(f.lower @ f.lower.T - (m + f.jitter * np.eye(n))))
        assert err <= 1e-10 * max(np.max(np.abs(m)), 1.0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.floats(1e-6, 1.0))
    def test_logdet_monotone_in_jitter(self, n, seed, extra):
        m = random_psd(np.random.default_rng(seed), n) + 1e-3 * np.eye(n)
        assert logdet_psd(cholesky_psd(m + extra * np.eye(n))) >= logdet_psd(cholesky_psd(m))

    def test_symmetrize_is_exact(self, rng):
        a = rng.normal(size=(4, 4))
        s = symmetrize(a)
        np.testing.assert_array_equal(s, s.T)
