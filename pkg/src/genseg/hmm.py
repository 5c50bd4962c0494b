"""Left-to-right unit HMMs with Gaussian-mixture emissions.

Each action unit is a chain of ``S`` states. A state may only loop on
itself or advance to its successor; the last state's advance is the exit
from the unit. Paths enter at state 0 on the first frame and exit from
state ``S - 1`` after the last frame.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Sequence

import numpy as np

from .errors import InvalidInputError, NoPathError
from .gmm import (
    DiagonalGmm,
    _m_step,
    fit_gmm,
    log_likelihood,
    posteriors,
    single_gaussian,
    variance_floor_for,
)

log = logging.getLogger(__name__)

P_SELF = 0.6
P_NEXT = 0.4
NEG_INF = -np.inf


@dataclass(frozen=True, eq=False)
class UnitHmm:
    """One action unit.

    Attributes
    ----------
    label : str
    log_self : ndarray, shape (S,)
        Log self-loop probability per state.
    log_next : ndarray, shape (S,)
        Log probability of advancing; for the last state this is the exit.
    states : tuple of DiagonalGmm
        Emission density per state.
    """

    label: str
    log_self: np.ndarray
    log_next: np.ndarray
    states: tuple

    def __post_init__(self):
        ls = np.asarray(self.log_self, dtype=float).ravel()
        ln = np.asarray(self.log_next, dtype=float).ravel()
        states = tuple(self.states)
        if len(states) < 1 or ls.shape != (len(states),) or ln.shape != ls.shape:
            raise InvalidInputError("need S >= 1 states with one transition pair each")
        if np.any(np.abs(np.exp(ls) + np.exp(ln) - 1.0) > 1e-10):
            raise InvalidInputError("self and next probabilities must sum to 1")
        if len({g.D for g in states}) != 1:
            raise InvalidInputError("all state densities must share one dimension")
        if not self.label or any(c.isspace() for c in self.label):
            raise InvalidInputError(f"invalid unit label {self.label!r}")
        ls.setflags(write=False)
        ln.setflags(write=False)
        object.__setattr__(self, "log_self", ls)
        object.__setattr__(self, "log_next", ln)
        object.__setattr__(self, "states", states)

    @property
    def S(self) -> int:
        return len(self.states)

    @property
    def D(self) -> int:
        return self.states[0].D

    def emission_log_prob(self, seq) -> np.ndarray:
        """``T x S`` matrix of per-state emission log-densities."""
        seq = np.asarray(seq, dtype=float)
        return np.stack([log_likelihood(g, seq) for g in self.states], axis=1)

    def with_params(self, log_self=None, log_next=None, states=None) -> "UnitHmm":
        return UnitHmm(
            self.label,
            self.log_self if log_self is None else log_self,
            self.log_next if log_next is None else log_next,
            self.states if states is None else states,
        )

    def __eq__(self, other):
        if not isinstance(other, UnitHmm):
            return NotImplemented
        return (
            self.label == other.label
            and np.array_equal(self.log_self, other.log_self)
            and np.array_equal(self.log_next, other.log_next)
            and self.states == other.states
        )

    __hash__ = None

    def __repr__(self):
        return f"UnitHmm(label={self.label!r}, S={self.S}, D={self.D})"


def state_count(mean_length: float, divisor: float = 10) -> int:
    """``max(1, round(mean_length / divisor))`` with halves rounded up."""
    return max(1, int(np.floor(mean_length / divisor + 0.5)))


def uniform_split(T: int, S: int) -> np.ndarray:
    """State index per frame when ``T`` frames are divided evenly over ``S`` states.

    Leftover frames go to the later states.
    """
    base, rem = divmod(T, S)
    sizes = [base] * (S - rem) + [base + 1] * rem
    return np.repeat(np.arange(S), sizes)


def _check_segments(segments, D=None):
    segs = [np.asarray(s, dtype=float) for s in segments]
    if not segs:
        raise InvalidInputError("at least one segment is required")
    for s in segs:
        if s.ndim != 2 or s.shape[0] == 0:
            raise InvalidInputError("segments must be non-empty T x D matrices")
        if not np.all(np.isfinite(s)):
            raise InvalidInputError("segments must be finite")
    dims = {s.shape[1] for s in segs}
    if len(dims) != 1 or (D is not None and dims != {D}):
        raise InvalidInputError("segment dimensions disagree")
    return segs


def init_hmm(
    label: str,
    segments: Sequence,
    states_per_frame_divisor: float = 10,
    n_mix: int = 1,
    variance_floor: float = 1e-4,
    seed=0,
) -> UnitHmm:
    """Initialise a unit HMM from its training samples.

    The state count is a tenth (by default) of the mean sample length. Each
    sample is cut into ``S`` contiguous, equally long pieces and piece ``j``
    trains state ``j``. Transitions start at self 0.6 / next 0.4, exit
    included.
    """
    segs = _check_segments(segments)
    S = state_count(np.mean([s.shape[0] for s in segs]), states_per_frame_divisor)
    pooled = np.concatenate(segs)
    floor = variance_floor_for(pooled, variance_floor)

    per_state: List[list] = [[] for _ in range(S)]
    for seg in segs:
        owner = uniform_split(seg.shape[0], S)
        for j in range(S):
            chunk = seg[owner == j]
            if chunk.shape[0]:
                per_state[j].append(chunk)

    dens = [None] * S
    for j in range(S):
        if not per_state[j]:
            continue
        frames = np.concatenate(per_state[j])
        k = min(int(n_mix), frames.shape[0])
        if k <= 1:
            dens[j] = single_gaussian(frames, floor)
        else:
            dens[j] = fit_gmm(frames, k, seed=seed, absolute_floor=floor)
    populated = [j for j in range(S) if dens[j] is not None]
    for j in range(S):
        if dens[j] is None:
            nearest = min(populated, key=lambda p: (abs(p - j), p))
            dens[j] = dens[nearest]

    return UnitHmm(label, np.full(S, np.log(P_SELF)), np.full(S, np.log(P_NEXT)), dens)


class ForwardBackward(NamedTuple):
    log_likelihood: float
    gamma: np.ndarray  # T x S state occupancy
    self_counts: np.ndarray  # S, expected self-loop transitions
    next_counts: np.ndarray  # S, expected advance/exit transitions


def _forward(B, ls, ln):
    T, S = B.shape
    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = B[0, 0]
    for t in range(1, T):
        stay = alpha[t - 1] + ls
        move = np.full(S, NEG_INF)
        move[1:] = alpha[t - 1, :-1] + ln[:-1]
        alpha[t] = np.logaddexp(stay, move) + B[t]
    return alpha


def forward_backward(hmm: UnitHmm, seq, B=None) -> ForwardBackward:
    """Expected state occupancies and transition counts for one segment."""
    if B is None:
        B = hmm.emission_log_prob(seq)
    T, S = B.shape
    if T < S:
        raise NoPathError(f"{T} frames cannot traverse {S} states", T, S)
    ls, ln = hmm.log_self, hmm.log_next
    alpha = _forward(B, ls, ln)
    logp = alpha[T - 1, S - 1] + ln[S - 1]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = ln[S - 1]
    for t in range(T - 2, -1, -1):
        nxt = B[t + 1] + beta[t + 1]
        stay = ls + nxt
        move = np.full(S, NEG_INF)
        move[:-1] = ln[:-1] + nxt[1:]
        beta[t] = np.logaddexp(stay, move)

    gamma = np.exp(alpha + beta - logp)
    with np.errstate(invalid="ignore"):
        xi_self = np.exp(alpha[:-1] + ls + B[1:] + beta[1:] - logp)
        xi_next = np.exp(alpha[:-1, :-1] + ln[:-1] + B[1:, 1:] + beta[1:, 1:] - logp)
    self_counts = np.nan_to_num(xi_self).sum(axis=0)
    next_counts = np.zeros(S)
    next_counts[:-1] = np.nan_to_num(xi_next).sum(axis=0)
    next_counts[-1] = 1.0
    return ForwardBackward(float(logp), gamma, self_counts, next_counts)


def forward_log_likelihood(hmm: UnitHmm, seq) -> float:
    """Total log-probability of ``seq`` summed over all state paths."""
    B = hmm.emission_log_prob(seq)
    T, S = B.shape
    if T < S:
        return NEG_INF
    alpha = _forward(B, hmm.log_self, hmm.log_next)
    return float(alpha[T - 1, S - 1] + hmm.log_next[S - 1])


@dataclass
class BaumWelchResult:
    hmm: UnitHmm
    log_likelihoods: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    n_skipped: int = 0


def baum_welch(
    hmm: UnitHmm,
    segments: Sequence,
    max_iters: int = 20,
    tol: float = 1e-4,
    variance_floor: float = 1e-4,
) -> BaumWelchResult:
    """Re-estimate transitions and emissions by forward-backward EM.

    Parameters
    ----------
    hmm : UnitHmm
        Starting point, usually from :func:`init_hmm`.
    segments : sequence of ndarray
        Training samples. Samples shorter than ``hmm.S`` admit no path and
        are skipped; the count is reported in the result.
    max_iters : int
    tol : float
        Stop once the log-likelihood per frame improves by less than this.
    variance_floor : float
        Relative to the pooled per-dimension variance of the used samples.

    Returns
    -------
    BaumWelchResult
        ``log_likelihoods`` holds the total log-likelihood of the starting
        model followed by the value after every update.
    """
    segs = _check_segments(segments, hmm.D)
    used = [s for s in segs if s.shape[0] >= hmm.S]
    skipped = len(segs) - len(used)
    if skipped:
        log.warning("%s: skipping %d segment(s) shorter than %d states", hmm.label, skipped, hmm.S)
    if not used:
        raise InvalidInputError(f"{hmm.label}: every segment is shorter than S={hmm.S}")
    if int(max_iters) <= 0:
        return BaumWelchResult(hmm, [], 0, False, skipped)

    X = np.concatenate(used)
    n_frames = X.shape[0]
    floor = variance_floor_for(X, variance_floor)

    def e_step(model):
        B_all = model.emission_log_prob(X)
        total = 0.0
        gammas = []
        self_c = np.zeros(model.S)
        next_c = np.zeros(model.S)
        pos = 0
        for seg in used:
            T = seg.shape[0]
            fb = forward_backward(model, seg, B_all[pos:pos + T])
            pos += T
            total += fb.log_likelihood
            gammas.append(fb.gamma)
            self_c += fb.self_counts
            next_c += fb.next_counts
        return total, np.concatenate(gammas), self_c, next_c

    current = hmm
    ll, G, self_c, next_c = e_step(current)
    history = [ll]
    converged = False
    n_iter = 0
    for _ in range(int(max_iters)):
        denom = self_c + next_c
        log_self = np.log(self_c) - np.log(denom)
        log_next = np.log(next_c) - np.log(denom)
        states = []
        for j, dens in enumerate(current.states):
            g = G[:, j]
            if dens.K == 1:
                resp = g[:, None]
            else:
                resp = g[:, None] * posteriors(dens, X)
            states.append(_m_step(X, resp, dens, floor, reseed=False))
        current = current.with_params(log_self, log_next, states)
        n_iter += 1
        ll, G, self_c, next_c = e_step(current)
        history.append(ll)
        if (history[-1] - history[-2]) / n_frames < tol:
            converged = True
            break
    return BaumWelchResult(current, history, n_iter, converged, skipped)


class Alignment(NamedTuple):
    path: np.ndarray
    log_score: float


def viterbi_align(hmm: UnitHmm, seq) -> Alignment:
    """Best state path through the unit, entering at frame 0 and exiting after the last.

    On exact ties the self-loop wins, which keeps state boundaries early.
    """
    B = hmm.emission_log_prob(seq)
    T, S = B.shape
    if T < S:
        raise NoPathError(f"{T} frames cannot traverse {S} states", T, S)
    ls, ln = hmm.log_self, hmm.log_next
    delta = np.full(S, NEG_INF)
    delta[0] = B[0, 0]
    moved = np.zeros((T, S), dtype=bool)
    for t in range(1, T):
        stay = delta + ls
        move = np.full(S, NEG_INF)
        move[1:] = delta[:-1] + ln[:-1]
        moved[t] = move > stay
        delta = np.where(moved[t], move, stay) + B[t]
    score = delta[S - 1] + ln[S - 1]
    path = np.empty(T, dtype=int)
    j = S - 1
    for t in range(T - 1, -1, -1):
        path[t] = j
        if t > 0 and moved[t, j]:
            j -= 1
    return Alignment(path, float(score))


def path_log_score(hmm: UnitHmm, seq, path) -> float:
    """Log-score of a given state path (emissions, transitions, exit)."""
    B = hmm.emission_log_prob(seq)
    path = np.asarray(path)
    score = B[np.arange(len(path)), path].sum()
    for t in range(1, len(path)):
        score += hmm.log_self[path[t]] if path[t] == path[t - 1] else hmm.log_next[path[t - 1]]
    return float(score + hmm.log_next[path[-1]])
