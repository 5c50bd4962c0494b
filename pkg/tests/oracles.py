"""Slow reference computations used as independent checks.

Nothing here calls into the code paths it is used to verify: densities
are written out from the Gaussian formula, decoding is exhaustive
enumeration, and gradients are central finite differences.
"""

import itertools
import math

import numpy as np

from genseg.gmm import DiagonalGmm
from genseg.grammar import END, START, BigramModel, PathGrammar
from genseg.hmm import UnitHmm


def naive_density(weights, means, variances, x):
    """sum_k w_k prod_d N(x_d; mu_kd, var_kd), straight from the formula."""
    total = 0.0
    for w, mu, var in zip(weights, means, variances):
        p = w
        for xd, m, v in zip(x, mu, var):
            p *= math.exp(-0.5 * (xd - m) ** 2 / v) / math.sqrt(2 * math.pi * v)
        total += p
    return total


def naive_log_density(weights, means, variances, x):
    terms = []
    for w, mu, var in zip(weights, means, variances):
        s = math.log(w)
        for xd, m, v in zip(x, mu, var):
            s += -0.5 * math.log(2 * math.pi * v) - 0.5 * (xd - m) ** 2 / v
        terms.append(s)
    top = max(terms)
    return top + math.log(sum(math.exp(t - top) for t in terms))


def mean_loglik(weights, means, sigmas, X):
    return np.mean([naive_log_density(weights, means, sigmas ** 2, x) for x in X])


def fd_fisher_vector(gmm: DiagonalGmm, X, h=1e-5):
    """Fisher vector from central differences of the mean log-likelihood.

    The gradient w.r.t. mu_kd is multiplied by sigma_kd / sqrt(w_k), the one
    w.r.t. sigma_kd by sigma_kd / sqrt(2 w_k).
    """
    w = np.asarray(gmm.weights)
    mu = np.array(gmm.means)
    sig = np.sqrt(np.array(gmm.variances))
    K, D = mu.shape
    g_mu = np.zeros((K, D))
    g_sig = np.zeros((K, D))
    for k in range(K):
        for d in range(D):
            up, dn = mu.copy(), mu.copy()
            up[k, d] += h
            dn[k, d] -= h
            grad = (mean_loglik(w, up, sig, X) - mean_loglik(w, dn, sig, X)) / (2 * h)
            g_mu[k, d] = grad * sig[k, d] / math.sqrt(w[k])
            up, dn = sig.copy(), sig.copy()
            up[k, d] += h
            dn[k, d] -= h
            grad = (mean_loglik(w, mu, up, X) - mean_loglik(w, mu, dn, X)) / (2 * h)
            g_sig[k, d] = grad * sig[k, d] / math.sqrt(2 * w[k])
    return np.concatenate([g_mu.ravel(), g_sig.ravel()])


def state_logpdf(gmm: DiagonalGmm, X):
    """T-vector of log densities using the explicit formula."""
    return np.array([naive_log_density(gmm.weights, gmm.means, gmm.variances, x) for x in X])


def _compositions(T, Q):
    """All ways to cut T frames into Q non-empty runs, as an (M, Q+1) cut array."""
    if Q > T:
        return np.zeros((0, Q + 1), dtype=int)
    cuts = list(itertools.combinations(range(1, T), Q - 1))
    arr = np.zeros((len(cuts), Q + 1), dtype=int)
    if Q > 1:
        arr[:, 1:-1] = np.array(cuts, dtype=int).reshape(len(cuts), Q - 1)
    arr[:, -1] = T
    return arr


def _candidate_sequences(model, hmms, T):
    if isinstance(model, PathGrammar):
        for seq in model.sequences:
            if sum(hmms[l].S for l in seq) <= T:
                yield tuple(seq)
        return
    vocab = model.vocabulary

    def extend(prefix, used):
        if prefix:
            yield tuple(prefix)
        for label in vocab:
            if used + hmms[label].S <= T:
                yield from extend(prefix + [label], used + hmms[label].S)

    yield from extend([], 0)


def _prior(model, seq):
    if isinstance(model, PathGrammar):
        return 0.0 if tuple(seq) in set(map(tuple, model.sequences)) else -np.inf
    total = 0.0
    for prev, nxt in zip((START,) + tuple(seq), tuple(seq) + (END,)):
        total += model.logp.get((prev, nxt), -np.inf)
    return total


def brute_force_decode(X, hmms, model, penalty=0.0, tie_tol=1e-9):
    """Exhaustive search over label sequences and every frame-to-state assignment.

    Returns (labels, unit start frames, total log-score). Candidates within
    ``tie_tol`` of the best score count as tied; among those the earliest
    boundaries win, then the lexicographically smaller label sequence.
    """
    X = np.asarray(X, dtype=float)
    T = X.shape[0]
    emis = {l: np.stack([state_logpdf(g, X) for g in h.states], axis=1) for l, h in hmms.items()}
    cum = {l: np.vstack([np.zeros((1, e.shape[1])), np.cumsum(e, axis=0)]) for l, e in emis.items()}
    scored = []
    for seq in _candidate_sequences(model, hmms, T):
        prior = _prior(model, seq)
        if prior == -np.inf:
            continue
        pos = [(l, j) for l in seq for j in range(hmms[l].S)]
        Q = len(pos)
        cuts = _compositions(T, Q)
        if cuts.shape[0] == 0:
            continue
        score = np.full(cuts.shape[0], prior - penalty * len(seq))
        for q, (l, j) in enumerate(pos):
            a, b = cuts[:, q], cuts[:, q + 1]
            h = hmms[l]
            score += cum[l][b, j] - cum[l][a, j] + (b - a - 1) * h.log_self[j] + h.log_next[j]
        unit_first = np.cumsum([0] + [hmms[l].S for l in seq])[:-1]
        scored.append((seq, score, cuts[:, unit_first]))
    if not scored:
        return None, None, -np.inf
    top = max(float(s.max()) for _, s, _ in scored)
    tied = []
    for seq, score, starts in scored:
        for i in np.flatnonzero(score >= top - tie_tol):
            tied.append((tuple(int(v) for v in starts[i]), tuple(seq), float(score[i])))
    starts, seq, total = min(tied)
    return list(seq), list(starts), total


def brute_force_align(hmm: UnitHmm, X):
    """Best score over all monotone state paths of one unit."""
    X = np.asarray(X, dtype=float)
    T = X.shape[0]
    emis = np.stack([state_logpdf(g, X) for g in hmm.states], axis=1)
    best, best_path = -np.inf, None
    for cuts in _compositions(T, hmm.S):
        s = 0.0
        path = []
        for j in range(hmm.S):
            a, b = cuts[j], cuts[j + 1]
            s += emis[a:b, j].sum() + (b - a - 1) * hmm.log_self[j] + hmm.log_next[j]
            path += [j] * (b - a)
        if s > best:
            best, best_path = s, path
    return best, np.array(best_path)


def random_hmm(rng, label, S, D, spread=3.0):
    p_self = rng.uniform(0.1, 0.9, size=S)
    states = [
        DiagonalGmm([1.0], rng.normal(scale=spread, size=(1, D)), rng.uniform(0.5, 2.0, size=(1, D)))
        for _ in range(S)
    ]
    return UnitHmm(label, np.log(p_self), np.log1p(-p_self), states)


def random_decoding_instance(rng, variant):
    """Random small problem: <= 3 units, <= 4 states each, T <= 12."""
    D = 2
    n_units = int(rng.integers(1, 4))
    labels = ["a", "b", "c"][:n_units]
    min_states = 2 if variant == "bigram" else 1
    hmms = {l: random_hmm(rng, l, int(rng.integers(min_states, 5)), D) for l in labels}
    if variant == "path":
        from genseg.grammar import build_path_grammar

        seqs = []
        for _ in range(int(rng.integers(1, 5))):
            length = int(rng.integers(1, 4))
            seqs.append([labels[i] for i in rng.integers(0, n_units, size=length)])
        model = build_path_grammar(seqs)
    else:
        from genseg.grammar import build_bigram

        corpus = [
            [labels[i] for i in rng.integers(0, n_units, size=int(rng.integers(1, 4)))]
            for _ in range(int(rng.integers(1, 6)))
        ]
        model = build_bigram(corpus, smoothing_k=float(rng.choice([0.0, 0.01, 0.5])))
    need = min(sum(hmms[l].S for l in s) for s in _feasible(model, hmms))
    T = int(rng.integers(max(need, 1), 13))
    X = rng.normal(scale=3.0, size=(T, D))
    return X, hmms, model


def _feasible(model, hmms):
    if isinstance(model, PathGrammar):
        return model.sequences
    # bigram: every vocabulary label on its own or preceded by a start arc
    out = []
    for seq in _candidate_sequences(model, hmms, 12):
        if _prior(model, seq) > -np.inf:
            out.append(seq)
    return out
