"""Fisher-vector encoding of frame sets under a diagonal GMM codebook."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import InvalidInputError
from .gmm import DiagonalGmm, _as_samples, posteriors

#: Responsibilities below this are treated as exactly zero.
POSTERIOR_CUTOFF = 1e-8


@dataclass(frozen=True, eq=False)
class FisherVector:
    """Raw or normalised FV, laid out as ``[G_mu_1..G_mu_K, G_sigma_1..G_sigma_K]``."""

    values: np.ndarray
    window: Optional[Tuple[int, int]] = None

    def __len__(self):
        return self.values.shape[0]


def _frame_statistics(gmm: DiagonalGmm, X: np.ndarray):
    """Per-frame contributions to the mean and sigma gradients.

    Returns two ``T x K x D`` arrays holding ``gamma * z`` and
    ``gamma * (z**2 - 1)`` with ``z = (x - mu) / sigma``.
    """
    gamma = posteriors(gmm, X)
    gamma[gamma < POSTERIOR_CUTOFF] = 0.0
    sigma = np.sqrt(gmm.variances)
    z = (X[:, None, :] - gmm.means[None]) / sigma[None]
    g = gamma[:, :, None]
    return g * z, g * (z * z - 1.0)


def _assemble(gmm: DiagonalGmm, s_mu, s_sigma, T):
    w = gmm.weights[:, None]
    g_mu = s_mu / (T * np.sqrt(w))
    g_sigma = s_sigma / (T * np.sqrt(2.0 * w))
    return np.concatenate([g_mu.ravel(), g_sigma.ravel()])


def encode_fv(gmm: DiagonalGmm, features, window=None) -> FisherVector:
    """Raw (unnormalised) Fisher vector of a ``T x D`` feature set.

    Only mean and standard-deviation gradients are kept, so the result has
    ``2 * D * K`` entries.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("features must be a non-empty T x D matrix")
    X = _as_samples(X, gmm.D)
    s_mu, s_sigma = _frame_statistics(gmm, X)
    values = _assemble(gmm, s_mu.sum(axis=0), s_sigma.sum(axis=0), X.shape[0])
    return FisherVector(values, window)


def power_normalize(v) -> np.ndarray:
    """Signed square root, ``sign(v) * sqrt(|v|)``."""
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.sqrt(np.abs(v))


def l2_normalize(v) -> np.ndarray:
    """Scale to unit Euclidean norm; the zero vector is returned unchanged."""
    v = np.asarray(v, dtype=float)
    peak = np.max(np.abs(v)) if v.size else 0.0
    if peak == 0:
        return v.copy()
    # pre-scaling keeps tiny and huge inputs away from under/overflow
    v = v / peak
    return v / np.linalg.norm(v)


def window_bounds(t: int, T: int, window: int) -> Tuple[int, int]:
    """Half-open frame range of the window centred on frame ``t``."""
    lo = t - window // 2
    hi = t + (window + 1) // 2
    return max(lo, 0), min(hi, T)


def sliding_window_encode(gmm: DiagonalGmm, seq, window: int = 20, threads: int = 1) -> np.ndarray:
    """Per-frame FVs over a centred window, power- then L2-normalised.

    Parameters
    ----------
    gmm : DiagonalGmm
    seq : array_like, shape (T, D)
    window : int
        Window length. Frame ``t`` covers
        ``[t - window // 2, t + ceil(window / 2))``, clamped to the sequence.
    threads : int
        Rows are independent; the output does not depend on this value.

    Returns
    -------
    ndarray, shape (T, 2 * D * K)
    """
    X = np.asarray(seq, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("sequence must be a non-empty T x D matrix")
    if int(window) < 1:
        raise InvalidInputError("window must be >= 1")
    X = _as_samples(X, gmm.D)
    T = X.shape[0]
    s_mu, s_sigma = _frame_statistics(gmm, X)
    out = np.empty((T, 2 * gmm.D * gmm.K))

    def row(t):
        lo, hi = window_bounds(t, T, int(window))
        fv = _assemble(gmm, s_mu[lo:hi].sum(axis=0), s_sigma[lo:hi].sum(axis=0), hi - lo)
        out[t] = l2_normalize(power_normalize(fv))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(row, range(T)))
    else:
        for t in range(T):
            row(t)
    return out
