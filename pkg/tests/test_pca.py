import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genseg.errors import InvalidInputError
from genseg.pca import clip_l2_per_dimension, fit_pca, project, unproject


def correlated(rng, n, m, rank=None):
    rank = rank or m
    A = rng.normal(size=(rank, m)) * rng.uniform(0.5, 3.0, size=(rank, 1))
    return rng.normal(size=(n, rank)) @ A + rng.normal(size=m)


class TestFit:
    def test_line_direction(self):
        t = np.linspace(-3, 3, 25)
        pca = fit_pca(np.column_stack([t, t]), 1, whiten=False)
        np.testing.assert_allclose(np.abs(pca.basis[:, 0]), [2 ** -0.5, 2 ** -0.5], atol=1e-12)

    def test_whitened_training_covariance_is_identity(self):
        rng = np.random.default_rng(0)
        X = correlated(rng, 400, 6)
        pca = fit_pca(X, 4)
        Y = project(pca, X)
        np.testing.assert_allclose(np.cov(Y, rowvar=False), np.eye(4), atol=1e-6)

    def test_basis_orthonormal_and_eigenvalues_sorted(self):
        rng = np.random.default_rng(1)
        pca = fit_pca(correlated(rng, 200, 8), 5)
        np.testing.assert_allclose(pca.basis.T @ pca.basis, np.eye(5), atol=1e-8)
        assert np.all(np.diff(pca.eigenvalues) <= 0)
        assert np.all(pca.eigenvalues >= 0)

    def test_sign_convention(self):
        rng = np.random.default_rng(2)
        pca = fit_pca(correlated(rng, 100, 5), 3)
        idx = np.argmax(np.abs(pca.basis), axis=0)
        assert np.all(pca.basis[idx, np.arange(3)] > 0)

    def test_wide_data_uses_gram_route(self):
        rng = np.random.default_rng(3)
        X = correlated(rng, 30, 100, rank=10)
        pca = fit_pca(X, 5)
        ref = fit_pca(X, 5)  # deterministic
        np.testing.assert_array_equal(pca.basis, ref.basis)
        np.testing.assert_allclose(pca.basis.T @ pca.basis, np.eye(5), atol=1e-8)
        cov = np.cov(X, rowvar=False)
        evals = np.sort(np.linalg.eigvalsh(cov))[::-1][:5]
        np.testing.assert_allclose(pca.eigenvalues, evals, rtol=1e-8)

    def test_optimal_reconstruction(self):
        rng = np.random.default_rng(4)
        X = correlated(rng, 300, 6)
        k = 2
        pca = fit_pca(X, k, whiten=False)
        Xc = X - X.mean(axis=0)
        err = np.sum((Xc - Xc @ pca.basis @ pca.basis.T) ** 2)
        for _ in range(100):
            Q, _ = np.linalg.qr(rng.normal(size=(6, k)))
            assert err <= np.sum((Xc - Xc @ Q @ Q.T) ** 2) + 1e-9

    def test_out_dim_too_large(self):
        with pytest.raises(InvalidInputError):
            fit_pca(np.random.default_rng(0).normal(size=(3, 5)), 3)

    def test_zero_variance(self):
        with pytest.raises(InvalidInputError):
            fit_pca(np.ones((10, 3)), 1)


class TestProject:
    def test_mean_maps_to_zero(self):
        rng = np.random.default_rng(5)
        X = correlated(rng, 50, 4)
        pca = fit_pca(X, 2)
        np.testing.assert_allclose(project(pca, pca.mean), 0.0, atol=1e-15)

    @pytest.mark.parametrize("whiten", [True, False])
    def test_rank_deficient_round_trip(self, whiten):
        rng = np.random.default_rng(6)
        X = correlated(rng, 80, 7, rank=3)
        pca = fit_pca(X, 3, whiten=whiten)
        np.testing.assert_allclose(unproject(pca, project(pca, X)), X, atol=1e-8)

    @given(st.floats(0, 1), st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_affine_without_whitening(self, a, seed):
        rng = np.random.default_rng(seed)
        pca = fit_pca(correlated(rng, 30, 4), 2, whiten=False)
        u, v = rng.normal(size=(2, 4))
        lhs = project(pca, a * u + (1 - a) * v)
        rhs = a * project(pca, u) + (1 - a) * project(pca, v)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(7)
        pca = fit_pca(correlated(rng, 30, 4), 2)
        with pytest.raises(InvalidInputError):
            project(pca, np.zeros(5))


class TestClipNormalization:
    def test_unit_columns(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(20, 5))
        X[:, 2] = 0.0
        out = clip_l2_per_dimension(X)
        norms = np.linalg.norm(out, axis=0)
        np.testing.assert_allclose(norms[[0, 1, 3, 4]], 1.0, atol=1e-10)
        np.testing.assert_array_equal(out[:, 2], 0.0)

    def test_single_frame(self):
        out = clip_l2_per_dimension(np.array([[3.0, -0.2, 0.0]]))
        np.testing.assert_array_equal(out, [[1.0, -1.0, 0.0]])

    def test_scale_invariance(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(12, 3))
        Y = X.copy()
        Y[:, 1] *= 7
        np.testing.assert_allclose(clip_l2_per_dimension(X), clip_l2_per_dimension(Y), atol=1e-15)
