"""PCA with optional whitening, and per-clip column normalisation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

WHITEN_EPSILON = 1e-8


@dataclass(frozen=True, eq=False)
class PcaModel:
    """Leading principal directions of an ``M``-dimensional sample.

    Attributes
    ----------
    mean : ndarray, shape (M,)
    basis : ndarray, shape (M, D')
        Orthonormal columns, each signed so its largest-magnitude entry is
        positive.
    eigenvalues : ndarray, shape (D',)
        Descending covariance eigenvalues for the retained directions.
    whiten : bool
    epsilon : float
        Added to each eigenvalue before taking the whitening square root.
    """

    mean: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray
    whiten: bool = True
    epsilon: float = WHITEN_EPSILON

    @property
    def M(self) -> int:
        return self.basis.shape[0]

    @property
    def out_dim(self) -> int:
        return self.basis.shape[1]

    @property
    def _scale(self):
        if self.whiten:
            return np.sqrt(self.eigenvalues + self.epsilon)
        return np.ones_like(self.eigenvalues)

    def __eq__(self, other):
        if not isinstance(other, PcaModel):
            return NotImplemented
        return (
            self.whiten == other.whiten
            and self.epsilon == other.epsilon
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.basis, other.basis)
            and np.array_equal(self.eigenvalues, other.eigenvalues)
        )

    __hash__ = None


def _fix_signs(basis):
    idx = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[idx, np.arange(basis.shape[1])])
    signs[signs == 0] = 1.0
    return basis * signs


def fit_pca(samples, out_dim: int, whiten: bool = True, epsilon: float = WHITEN_EPSILON) -> PcaModel:
    """Eigendecomposition of the (``1/(N-1)``) sample covariance.

    When ``M > N`` the decomposition goes through the ``N x N`` Gram matrix,
    which has the same non-zero spectrum.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2:
        raise InvalidInputError("samples must be an N x M matrix")
    n, m = X.shape
    out_dim = int(out_dim)
    if n < 2:
        raise InvalidInputError("PCA needs at least two samples")
    if out_dim < 1 or out_dim > min(n - 1, m):
        raise InvalidInputError(
            f"out_dim={out_dim} must lie in [1, min(N-1, M)] = [1, {min(n - 1, m)}]"
        )
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("samples must be finite")
    mean = X.mean(axis=0)
    Xc = X - mean
    if not np.any(Xc):
        raise InvalidInputError("samples have zero variance")

    if m <= n:
        cov = (Xc.T @ Xc) / (n - 1)
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1][:out_dim]
        evals = evals[order]
        basis = evecs[:, order]
    else:
        gram = (Xc @ Xc.T) / (n - 1)
        evals, u = np.linalg.eigh(gram)
        order = np.argsort(evals)[::-1][:out_dim]
        evals = evals[order]
        if np.any(evals <= 0):
            raise InvalidInputError("requested more directions than the data rank")
        basis = Xc.T @ u[:, order] / np.sqrt(evals * (n - 1))
        # one re-orthonormalisation pass against round-off
        basis, _ = np.linalg.qr(basis)
    evals = np.maximum(evals, 0.0)
    return PcaModel(mean, _fix_signs(basis), evals, bool(whiten), float(epsilon))


def project(pca: PcaModel, v) -> np.ndarray:
    """Map a vector (``M``) or rows of a matrix (``N x M``) to ``D'`` dims."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != pca.M:
        raise InvalidInputError(f"dimension mismatch: expected M={pca.M}, got {v.shape[-1]}")
    return ((v - pca.mean) @ pca.basis) / pca._scale


def unproject(pca: PcaModel, y) -> np.ndarray:
    """Inverse of :func:`project` restricted to the retained subspace."""
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != pca.out_dim:
        raise InvalidInputError(
            f"dimension mismatch: expected D'={pca.out_dim}, got {y.shape[-1]}"
        )
    return (y * pca._scale) @ pca.basis.T + pca.mean


def clip_l2_per_dimension(seq) -> np.ndarray:
    """Divide each column of a clip by its Euclidean norm over time.

    All-zero columns are left as they are.
    """
    X = np.asarray(seq, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise InvalidInputError("expected a non-empty T x D matrix")
    norms = np.linalg.norm(X, axis=0)
    norms[norms == 0] = 1.0
    return X / norms
