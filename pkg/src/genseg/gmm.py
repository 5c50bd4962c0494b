"""Diagonal-covariance Gaussian mixture models.

The same model type serves as the Fisher-vector codebook and as the
per-state observation density of the unit HMMs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidInputError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class DiagonalGmm:
    """Mixture of ``K`` Gaussians with diagonal covariances over ``D`` dims.

    Parameters
    ----------
    weights : ndarray, shape (K,)
    means : ndarray, shape (K, D)
    variances : ndarray, shape (K, D)
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        var = np.atleast_2d(np.asarray(self.variances, dtype=float))
        if w.ndim != 1 or mu.shape != var.shape or mu.shape[0] != w.shape[0]:
            raise InvalidInputError(
                f"inconsistent GMM shapes: weights {w.shape}, means {mu.shape}, "
                f"variances {var.shape}"
            )
        if w.size < 1 or mu.shape[1] < 1:
            raise InvalidInputError("a GMM needs K >= 1 and D >= 1")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-10:
            raise InvalidInputError("mixture weights must be positive and sum to 1")
        if np.any(~(var > 0)) or not np.all(np.isfinite(mu)):
            raise InvalidInputError("variances must be positive and means finite")
        for name, arr in (("weights", w), ("means", mu), ("variances", var)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def D(self) -> int:
        return self.means.shape[1]

    @cached_property
    def _precision(self):
        return 1.0 / self.variances

    @cached_property
    def _log_norm(self):
        # log w_k - 0.5 * (D log 2pi + sum_d log var_kd)
        return np.log(self.weights) - 0.5 * (
            self.D * LOG_2PI + np.log(self.variances).sum(axis=1)
        )

    @cached_property
    def _center(self):
        return self.weights @ self.means

    def component_log_prob(self, X) -> np.ndarray:
        """``log w_k + log N(x_n; mu_k, var_k)`` as an ``N x K`` matrix."""
        X = _as_samples(X, self.D)
        # expand the quadratic around the mixture centre to limit cancellation
        Xc = X - self._center
        Mc = self.means - self._center
        P = self._precision
        quad = (Xc * Xc) @ P.T - 2.0 * (Xc @ (Mc * P).T) + (Mc * Mc * P).sum(axis=1)
        np.maximum(quad, 0.0, out=quad)
        return self._log_norm - 0.5 * quad

    def __eq__(self, other):
        if not isinstance(other, DiagonalGmm):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.variances, other.variances)
        )

    __hash__ = None

    def __repr__(self):
        return f"DiagonalGmm(K={self.K}, D={self.D})"


def _as_samples(X, D=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise InvalidInputError("expected a vector or an N x D matrix")
    if D is not None and X.shape[1] != D:
        raise InvalidInputError(f"dimension mismatch: expected D={D}, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("samples must be finite")
    return X


def posteriors(gmm: DiagonalGmm, x) -> np.ndarray:
    """Component responsibilities for a vector (``K``) or matrix (``N x K``)."""
    single = np.ndim(x) == 1
    lp = gmm.component_log_prob(x)
    lp -= lp.max(axis=1, keepdims=True)
    np.exp(lp, out=lp)
    lp /= lp.sum(axis=1, keepdims=True)
    return lp[0] if single else lp


def log_likelihood(gmm: DiagonalGmm, x):
    """``log sum_k w_k N(x; mu_k, var_k)``; scalar for a vector, array for a matrix."""
    single = np.ndim(x) == 1
    ll = logsumexp(gmm.component_log_prob(x), axis=1)
    return float(ll[0]) if single else ll


def sample_gmm(gmm: DiagonalGmm, n: int, seed=None, return_components=False):
    """Draw ``n`` i.i.d. samples; deterministic for a fixed seed."""
    if int(n) < 1:
        raise InvalidInputError("n must be >= 1")
    rng = np.random.default_rng(seed)
    comp = rng.choice(gmm.K, size=int(n), p=gmm.weights)
    z = rng.standard_normal((int(n), gmm.D))
    X = gmm.means[comp] + np.sqrt(gmm.variances[comp]) * z
    return (X, comp) if return_components else X


def variance_floor_for(samples, relative_floor=1e-4) -> np.ndarray:
    """Per-dimension variance floor, relative to the global sample variance.

    Dimensions with zero spread get ``relative_floor`` as an absolute floor.
    """
    var = np.var(samples, axis=0)
    floor = relative_floor * var
    floor[~(floor > 0)] = relative_floor
    return floor


def single_gaussian(samples, floor) -> DiagonalGmm:
    """Maximum-likelihood single component fit with floored variances."""
    samples = np.asarray(samples, dtype=float)
    mu = samples.mean(axis=0)
    var = np.maximum(((samples - mu) ** 2).mean(axis=0), floor)
    return DiagonalGmm(np.ones(1), mu[None], var[None])


def _kmeans_pp(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[i] = X[idx]
        d2 = np.minimum(d2, ((X - centers[i]) ** 2).sum(axis=1))
    return centers


def _sq_dists(X, centers):
    return (
        (X * X).sum(axis=1)[:, None]
        - 2.0 * X @ centers.T
        + (centers * centers).sum(axis=1)[None, :]
    )


def _kmeans(X, centers, n_iter):
    assign = np.argmin(_sq_dists(X, centers), axis=1)
    for _ in range(n_iter):
        new = centers.copy()
        for j in range(centers.shape[0]):
            members = assign == j
            if members.any():
                new[j] = X[members].mean(axis=0)
        centers = new
        assign = np.argmin(_sq_dists(X, centers), axis=1)
    return centers, assign


def _initial_gmm(X, k, rng, floor):
    n = X.shape[0]
    centers, assign = _kmeans(X, _kmeans_pp(X, k, rng), n_iter=10)
    counts = np.bincount(assign, minlength=k).astype(float)
    # empty clusters: move them onto the worst-fit samples
    for j in np.flatnonzero(counts == 0):
        resid = ((X - centers[assign]) ** 2).sum(axis=1)
        resid[counts[assign] < 2] = -np.inf
        i = int(np.argmax(resid))
        counts[assign[i]] -= 1
        centers[j] = X[i]
        assign[i] = j
        counts[j] = 1
    global_var = np.maximum(X.var(axis=0), floor)
    var = np.empty_like(centers)
    for j in range(k):
        members = X[assign == j]
        if members.shape[0] >= 2:
            var[j] = np.maximum(members.var(axis=0), floor)
        else:
            var[j] = global_var
    return DiagonalGmm(counts / n, centers, var)


def _m_step(X, resp, gmm, floor, reseed=True):
    """Weighted maximum-likelihood update of every component.

    With ``reseed`` components holding under 1e-8 of the mass are moved to
    poorly explained samples. Without it the exact update is used whenever
    the mass is positive and a massless component keeps its parameters,
    which preserves the monotone likelihood of an embedding EM loop.
    """
    n = X.shape[0]
    nk = resp.sum(axis=0)
    means = np.empty_like(gmm.means)
    variances = np.empty_like(gmm.variances)
    empty = nk < 1e-8 if reseed else ~(nk > 0)
    if not reseed:
        means[empty] = gmm.means[empty]
        variances[empty] = gmm.variances[empty]
    for k in range(gmm.K):
        if empty[k]:
            continue
        r = resp[:, k]
        mu = (r @ X) / nk[k]
        diff = X - mu
        means[k] = mu
        variances[k] = np.maximum((r @ (diff * diff)) / nk[k], floor)
    if reseed and empty.any():
        # keep K fixed: re-seed starved components at poorly explained samples
        assign = np.argmax(resp, axis=1)
        ok = ~empty
        resid = np.full(n, -np.inf)
        member = ok[assign]
        resid[member] = ((X[member] - means[assign[member]]) ** 2).sum(axis=1)
        global_var = np.maximum(X.var(axis=0), floor)
        for k in np.flatnonzero(empty):
            i = int(np.argmax(resid))
            means[k] = X[i]
            variances[k] = global_var
            nk[k] = 1.0
            resid[i] = -np.inf
    # a massless component keeps a negligible positive weight
    nk = np.maximum(nk, 1e-300)
    weights = nk / nk.sum()
    return DiagonalGmm(weights, means, variances)


def fit_gmm(
    samples,
    k: int,
    max_iters: int = 100,
    tol: float = 1e-5,
    variance_floor: float = 1e-4,
    seed=0,
    return_history: bool = False,
    absolute_floor=None,
):
    """Fit a diagonal GMM by EM.

    Initialisation is k-means++ seeding followed by 10 Lloyd iterations.
    EM stops after ``max_iters`` iterations or once the mean per-sample
    log-likelihood improves by less than ``tol``.

    Parameters
    ----------
    samples : array_like, shape (N, D)
    k : int
        Number of components; ``N >= k`` is required.
    variance_floor : float
        Floor on every variance, relative to the per-dimension variance of
        ``samples``.
    seed : int or None
    return_history : bool
        Also return the mean log-likelihood before the first and after every
        EM update.
    absolute_floor : array_like, optional
        Per-dimension floor used as-is instead of ``variance_floor``.

    Returns
    -------
    gmm : DiagonalGmm
    history : list of float
        Only when ``return_history`` is set.
    """
    X = _as_samples(samples)
    k = int(k)
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    if X.shape[0] < k:
        raise InvalidInputError(f"need at least k={k} samples, got {X.shape[0]}")
    rng = np.random.default_rng(seed)
    if absolute_floor is None:
        floor = variance_floor_for(X, variance_floor)
    else:
        floor = np.broadcast_to(np.asarray(absolute_floor, dtype=float), (X.shape[1],))

    gmm = _initial_gmm(X, k, rng, floor)
    logp = gmm.component_log_prob(X)
    ll = logsumexp(logp, axis=1)
    history = [float(ll.mean())]
    for _ in range(int(max_iters)):
        resp = np.exp(logp - ll[:, None])
        gmm = _m_step(X, resp, gmm, floor)
        logp = gmm.component_log_prob(X)
        ll = logsumexp(logp, axis=1)
        history.append(float(ll.mean()))
        if history[-1] - history[-2] < tol:
            break
    return (gmm, history) if return_history else gmm
