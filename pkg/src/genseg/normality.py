"""Per-dimension normality testing: Lilliefors and Jarque-Bera.

Lilliefors p-values come from a Monte Carlo null distribution simulated
once per sample-size bucket and cached on disk. Within a bucket the
statistic is compared on the ``sqrt(n) * D`` scale, which is close to
invariant in ``n``; between buckets p-values are interpolated linearly.
"""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import chi2

from .errors import InvalidInputError

log = logging.getLogger(__name__)

MIN_SAMPLES = 8
TABLE_SIMULATIONS = 10_000
TABLE_SEED = 1967
TABLE_BUCKETS = tuple(
    list(range(8, 51))
    + sorted(set(int(round(b)) for b in np.geomspace(50, 5000, 18)[1:]))
)
DEFAULT_ALPHAS = (0.5, 0.2, 0.1, 0.05, 0.01, 0.005, 0.001)


class NormalityResult(NamedTuple):
    statistic: float
    p_value: float
    passed: bool


def _standardize(x):
    mean = x.mean(axis=-1, keepdims=True)
    std = x.std(axis=-1, ddof=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return (x - mean) / std, std[..., 0]


def lilliefors_statistic(x) -> np.ndarray:
    """KS distance between the empirical CDF and a normal fitted to ``x``.

    Works along the last axis, so a matrix yields one statistic per row.
    Rows with zero spread give NaN.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    z, std = _standardize(np.sort(x, axis=-1))
    cdf = ndtr(z)
    i = np.arange(1, n + 1)
    d_plus = (i / n - cdf).max(axis=-1)
    d_minus = (cdf - (i - 1) / n).max(axis=-1)
    stat = np.maximum(d_plus, d_minus)
    return np.where(std > 0, stat, np.nan)


def _simulate_bucket(n, n_sims, seed):
    rng = np.random.default_rng([seed, n])
    out = np.empty(n_sims)
    chunk = max(1, 2_000_000 // n)
    for lo in range(0, n_sims, chunk):
        hi = min(lo + chunk, n_sims)
        out[lo:hi] = lilliefors_statistic(rng.standard_normal((hi - lo, n)))
    return np.sort(out * np.sqrt(n))


def _cache_dir() -> Path:
    root = os.environ.get("GENSEG_CACHE_DIR")
    if root:
        return Path(root)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "genseg"


@lru_cache(maxsize=4)
def lilliefors_table(n_sims: int = TABLE_SIMULATIONS, seed: int = TABLE_SEED):
    """Sorted null draws of ``sqrt(n) * D`` for every bucket size.

    Returns ``(buckets, table)`` with ``table[i]`` the sorted draws for
    ``buckets[i]``. Built on first use and cached under
    ``$GENSEG_CACHE_DIR`` (default ``~/.cache/genseg``).
    """
    buckets = np.asarray(TABLE_BUCKETS)
    path = _cache_dir() / f"lilliefors-v1-{n_sims}-{seed}.npz"
    if path.exists():
        try:
            with np.load(path) as data:
                if np.array_equal(data["buckets"], buckets):
                    return buckets, data["table"]
        except (OSError, ValueError, KeyError):
            log.warning("ignoring unreadable Lilliefors cache %s", path)
    log.info("simulating Lilliefors null distribution (%d buckets)", len(buckets))
    table = np.stack([_simulate_bucket(int(n), n_sims, seed) for n in buckets])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f"{path.stem}.{os.getpid()}.tmp.npz")
        np.savez_compressed(tmp, buckets=buckets, table=table)
        os.replace(tmp, path)
    except OSError:
        log.warning("could not write Lilliefors cache to %s", path)
    return buckets, table


def lilliefors_pvalue(stat, n: int) -> np.ndarray:
    """Monte Carlo p-value(s) for Lilliefors statistic(s) at sample size ``n``."""
    if n < MIN_SAMPLES:
        raise InvalidInputError(f"Lilliefors needs n >= {MIN_SAMPLES}")
    buckets, table = lilliefors_table()
    stat = np.asarray(stat, dtype=float)
    scaled = np.sqrt(n) * stat
    n_sims = table.shape[1]

    def p_at(i):
        above = n_sims - np.searchsorted(table[i], scaled, side="left")
        return (above + 1.0) / (n_sims + 1.0)

    hi = int(np.searchsorted(buckets, n))
    if hi >= len(buckets):
        p = p_at(len(buckets) - 1)
    elif buckets[hi] == n:
        p = p_at(hi)
    else:
        lo = hi - 1
        frac = (n - buckets[lo]) / (buckets[hi] - buckets[lo])
        p = (1.0 - frac) * p_at(lo) + frac * p_at(hi)
    return np.where(np.isnan(stat), 0.0, p)


def _check_sample(samples):
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1:
        raise InvalidInputError("expected a 1-D sample")
    if x.size < MIN_SAMPLES:
        raise InvalidInputError(f"need at least {MIN_SAMPLES} observations")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("sample must be finite")
    return x


def lilliefors(samples, alpha: float = 0.05) -> NormalityResult:
    """Lilliefors test of normality with mean and variance estimated.

    A constant sample is reported as a rejection (NaN statistic, p = 0).
    """
    x = _check_sample(samples)
    stat = float(lilliefors_statistic(x))
    p = float(lilliefors_pvalue(stat, x.size))
    return NormalityResult(stat, p, bool(p > alpha))


def jarque_bera_statistic(x) -> np.ndarray:
    """``n/6 * (S**2 + (K - 3)**2 / 4)`` along the last axis (NaN if constant)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    d = x - x.mean(axis=-1, keepdims=True)
    m2 = (d * d).mean(axis=-1)
    m3 = (d ** 3).mean(axis=-1)
    m4 = (d ** 4).mean(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        skew = m3 / m2 ** 1.5
        kurt = m4 / m2 ** 2
        stat = n / 6.0 * (skew ** 2 + (kurt - 3.0) ** 2 / 4.0)
    return np.where(m2 > 0, stat, np.nan)


def jarque_bera(samples, alpha: float = 0.05) -> NormalityResult:
    """Jarque-Bera test; p-value from the chi-square(2) tail."""
    x = _check_sample(samples)
    stat = float(jarque_bera_statistic(x))
    if np.isnan(stat):
        return NormalityResult(stat, 0.0, False)
    p = float(chi2.sf(stat, 2))
    return NormalityResult(stat, p, bool(p > alpha))


TESTS = ("lilliefors", "jarque_bera")


@dataclass
class NormalityReport:
    """Fraction of dimensions that pass each test at each significance level."""

    alphas: list
    fractions: dict
    samples_per_dim: int
    n_dims: int
    p_values: dict = field(default_factory=dict, repr=False)

    def fraction(self, test: str, alpha: float) -> float:
        return self.fractions[test][list(self.alphas).index(alpha)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["test", "alpha", "fraction_pass", "n_dims", "samples_per_dim"])
        for test in TESTS:
            for alpha, frac in zip(self.alphas, self.fractions[test]):
                w.writerow([test, repr(float(alpha)), repr(float(frac)), self.n_dims, self.samples_per_dim])
        return buf.getvalue()


def dimension_pass_report(
    data,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    samples_per_dim: int = 2000,
    seed=0,
) -> NormalityReport:
    """Run both tests on a random subsample of every column of ``data``.

    The subsample of dimension ``d`` is drawn without replacement using a
    generator seeded by ``(seed, d)``.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise InvalidInputError("data must be an N x D matrix")
    n, dims = X.shape
    alphas = [float(a) for a in alphas]
    if not alphas or any(not 0 < a < 1 for a in alphas):
        raise InvalidInputError("alphas must lie in (0, 1)")
    samples_per_dim = int(samples_per_dim)
    if samples_per_dim > n or samples_per_dim < MIN_SAMPLES:
        raise InvalidInputError(
            f"samples_per_dim must lie in [{MIN_SAMPLES}, N={n}], got {samples_per_dim}"
        )
    sub = np.empty((dims, samples_per_dim))
    for d in range(dims):
        rng = np.random.default_rng([int(seed), d])
        sub[d] = X[rng.choice(n, samples_per_dim, replace=False), d]

    p_lil = lilliefors_pvalue(lilliefors_statistic(sub), samples_per_dim)
    jb = jarque_bera_statistic(sub)
    p_jb = np.where(np.isnan(jb), 0.0, chi2.sf(np.nan_to_num(jb), 2))
    p_values = {"lilliefors": p_lil, "jarque_bera": p_jb}
    fractions = {
        test: [float(np.mean(p_values[test] > a)) for a in alphas] for test in TESTS
    }
    return NormalityReport(alphas, fractions, samples_per_dim, dims, p_values)
