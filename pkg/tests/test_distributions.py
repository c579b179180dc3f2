import numpy as np
import pytest
from numpy.testing import assert_allclose

from vbmem.distributions import (
    FullGaussian,
    MatrixNormalDist,
    OneHotCategorical,
    DiagGaussian,
    expect_quadratic_form,
    kl_categorical,
    kl_full_gaussian,
    kl_matrix_normal,
    reparam_sample_matrix_normal,
)
from vbmem.errors import InvalidArgument


def spd(n, rng):
    A = rng.standard_normal((n, n))
    return A @ A.T / n + 0.5 * np.eye(n)


class TestMatrixNormalKL:
    def test_identical_is_zero(self):
        rng = np.random.default_rng(0)
        d = MatrixNormalDist(rng.standard_normal((3, 2)), spd(3, rng))
        assert abs(kl_matrix_normal(d, d)) < 1e-12

    def test_scalar_unit_shift(self):
        q = MatrixNormalDist([[1.0]], [[1.0]])
        p = MatrixNormalDist([[0.0]], [[1.0]])
        assert_allclose(kl_matrix_normal(q, p), 0.5, rtol=0, atol=1e-15)

    def test_matches_vectorized_gaussian(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            K, C = rng.integers(1, 5, size=2)
            q = MatrixNormalDist(rng.standard_normal((K, C)), spd(K, rng))
            p = MatrixNormalDist(rng.standard_normal((K, C)), spd(K, rng))
            assert abs(kl_matrix_normal(q, p) - kl_full_gaussian(q.vectorized(), p.vectorized())) < 1e-10

    def test_monte_carlo(self):
        rng = np.random.default_rng(2)
        q = MatrixNormalDist(rng.standard_normal((3, 4)), spd(3, rng))
        p = MatrixNormalDist(rng.standard_normal((3, 4)), spd(3, rng))
        from scipy import stats

        vq, vp = q.vectorized(), p.vectorized()
        x = stats.multivariate_normal(vq.mean, vq.cov).rvs(100_000, random_state=rng)
        diffs = (stats.multivariate_normal(vq.mean, vq.cov).logpdf(x)
                 - stats.multivariate_normal(vp.mean, vp.cov).logpdf(x))
        se = diffs.std(ddof=1) / np.sqrt(diffs.size)
        assert abs(diffs.mean() - kl_matrix_normal(q, p)) < 3 * se

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgument):
            kl_matrix_normal(MatrixNormalDist(np.zeros((2, 2)), np.eye(2)),
                             MatrixNormalDist(np.zeros((2, 3)), np.eye(2)))

    def test_non_pd_row_covariance(self):
        q = MatrixNormalDist(np.zeros((2, 2)), [[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(InvalidArgument):
            kl_matrix_normal(q, MatrixNormalDist(np.zeros((2, 2)), np.eye(2)))


class TestFullGaussianKL:
    def test_scalar(self):
        assert_allclose(kl_full_gaussian(FullGaussian([1.0], [[1.0]]), FullGaussian([0.0], [[1.0]])), 0.5)

    def test_identical(self):
        rng = np.random.default_rng(3)
        d = FullGaussian(rng.standard_normal(3), spd(3, rng))
        assert abs(kl_full_gaussian(d, d)) < 1e-12

    def test_monte_carlo(self):
        from scipy import stats

        rng = np.random.default_rng(4)
        q = FullGaussian(rng.standard_normal(3), spd(3, rng))
        p = FullGaussian(rng.standard_normal(3), spd(3, rng))
        sq, sp = stats.multivariate_normal(q.mean, q.cov), stats.multivariate_normal(p.mean, p.cov)
        x = sq.rvs(100_000, random_state=rng)
        d = sq.logpdf(x) - sp.logpdf(x)
        assert abs(d.mean() - kl_full_gaussian(q, p)) < 3 * d.std(ddof=1) / np.sqrt(d.size)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgument):
            kl_full_gaussian(FullGaussian.standard(2), FullGaussian.standard(3))


class TestCategorical:
    def test_values(self):
        assert kl_categorical(OneHotCategorical([0.3, 0.7]), OneHotCategorical([0.3, 0.7])) == 0.0
        assert_allclose(kl_categorical(OneHotCategorical([1.0, 0.0]), OneHotCategorical([0.5, 0.5])), np.log(2))
        expected = 0.5 * np.log(0.5 / 0.25) + 0.5 * np.log(0.5 / 0.75)
        assert_allclose(kl_categorical(OneHotCategorical([0.5, 0.5]), OneHotCategorical([0.25, 0.75])), expected)
        assert_allclose(expected, 0.1438, atol=1e-4)

    def test_zero_support_is_an_error(self):
        with pytest.raises(InvalidArgument):
            kl_categorical(OneHotCategorical([0.5, 0.5]), OneHotCategorical([1.0, 0.0]))

    def test_simplex_validation(self):
        with pytest.raises(InvalidArgument):
            OneHotCategorical([0.5, 0.6])
        with pytest.raises(InvalidArgument):
            OneHotCategorical([1.5, -0.5])

    def test_moments(self):
        d = OneHotCategorical([0.2, 0.8])
        assert_allclose(d.second_moment, np.diag([0.2, 0.8]))
        assert_allclose(d.cov, np.diag([0.2, 0.8]) - np.outer([0.2, 0.8], [0.2, 0.8]))


class TestReparam:
    def test_zero_noise(self):
        d = MatrixNormalDist([[1.0, 2.0]], [[3.0]])
        assert_allclose(reparam_sample_matrix_normal(d, np.zeros((1, 2))), d.R)

    def test_identity_covariance(self):
        rng = np.random.default_rng(5)
        R, E = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
        assert_allclose(reparam_sample_matrix_normal(MatrixNormalDist(R, np.eye(3)), E), R + E)

    def test_diagonal_covariance(self):
        R = np.arange(6.0).reshape(2, 3)
        out = reparam_sample_matrix_normal(MatrixNormalDist(R, np.diag([4.0, 1.0])), np.ones((2, 3)))
        assert_allclose(out - R, [[2, 2, 2], [1, 1, 1]])

    def test_noise_shape(self):
        with pytest.raises(InvalidArgument):
            reparam_sample_matrix_normal(MatrixNormalDist(np.zeros((2, 2)), np.eye(2)), np.zeros((2, 3)))

    def test_sample_statistics(self):
        rng = np.random.default_rng(6)
        K, C, n = 2, 3, 100_000
        d = MatrixNormalDist(rng.standard_normal((K, C)), spd(K, rng))
        E = rng.standard_normal((n, K, C))
        samples = d.R + np.einsum("ij,njc->nic", np.linalg.cholesky(d.U), E)
        assert_allclose(samples[17], reparam_sample_matrix_normal(d, E[17]))
        vec = samples.transpose(0, 2, 1).reshape(n, -1)
        target = d.vectorized()
        se = np.sqrt(np.diag(target.cov) / n)
        assert np.all(np.abs(vec.mean(0) - target.mean) < 4 * se)
        cov = np.cov(vec, rowvar=False)
        assert np.linalg.norm(cov - target.cov) / np.linalg.norm(target.cov) < 0.05


class TestQuadraticForm:
    def test_standard_gaussian(self):
        assert_allclose(expect_quadratic_form(FullGaussian.standard(4), np.eye(4)), 4.0)

    def test_deterministic_categorical(self):
        assert expect_quadratic_form(OneHotCategorical([1.0, 0.0]), [[2.0, 0.0], [0.0, 5.0]]) == 2.0

    def test_monte_carlo(self):
        rng = np.random.default_rng(7)
        d = FullGaussian(rng.standard_normal(3), spd(3, rng))
        A = spd(3, rng)
        w = rng.multivariate_normal(d.mean, d.cov, size=100_000)
        vals = np.einsum("ni,ij,nj->n", w, A, w)
        assert abs(vals.mean() - expect_quadratic_form(d, A)) < 3 * vals.std(ddof=1) / np.sqrt(w.shape[0])

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgument):
            expect_quadratic_form(FullGaussian.standard(2), np.eye(3))


def test_diag_gaussian_rejects_negative_variance():
    with pytest.raises(InvalidArgument):
        DiagGaussian([0.0], [-1.0])


def test_values_are_immutable():
    d = MatrixNormalDist(np.zeros((2, 2)), np.eye(2))
    with pytest.raises(ValueError):
        d.R[0, 0] = 1.0
