"""Grammar-constrained Viterbi decoding over chains of unit HMMs.

The sequence model's decoding graph is expanded so that each graph node
owns a copy of its unit's state chain. Tokens move through those chains
frame by frame; a token leaving the last state of a node may enter the
first state of any successor node, picking up the arc's log-probability
minus the unit insertion penalty.

Score ties are resolved locally and deterministically: a state keeps its
earlier entry (self-loop) over a later one, competing arcs into a node
prefer the source whose label sorts first, and competing final nodes
prefer the label that sorts first. Scores within a relative ``TIE_RTOL``
count as tied, so that mathematically equal paths (for example the split
point between two copies of a one-state unit) do not get decided by
rounding noise.
"""

from __future__ import annotations

import heapq
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .errors import InvalidInputError, NoPathError
from .grammar import DecodingGraph
from .hmm import UnitHmm, viterbi_align
from .sequences import Segmentation, Span

NEG_INF = -np.inf
TIE_RTOL = 1e-12


def _slack(score):
    """Tie tolerance around ``score`` (zero for infinite scores)."""
    score = np.asarray(score, dtype=float)
    return np.where(np.isfinite(score), TIE_RTOL * (1.0 + np.abs(np.nan_to_num(score))), 0.0)


def _graph_of(model) -> DecodingGraph:
    if isinstance(model, DecodingGraph):
        return model
    return model.decoding_graph()


def min_frames(graph: DecodingGraph, hmms: Mapping[str, UnitHmm]) -> Optional[int]:
    """Fewest frames any complete path of the graph needs (None if no path ends)."""
    cost = [0] + [hmms[l].S for l in graph.node_labels[1:]]
    out = [[] for _ in range(graph.n_nodes)]
    for src, dst, _ in graph.arcs:
        out[src].append(dst)
    dist = [None] * graph.n_nodes
    heap = [(0, 0)]
    while heap:
        d, n = heapq.heappop(heap)
        if dist[n] is not None:
            continue
        dist[n] = d
        for m in out[n]:
            if dist[m] is None:
                heapq.heappush(heap, (d + cost[m], m))
    ends = [dist[n] for n in range(1, graph.n_nodes) if dist[n] is not None and graph.end_logp[n] > NEG_INF]
    return min(ends) if ends else None


class _Network:
    """Flattened composite state space of a decoding graph."""

    def __init__(self, graph: DecodingGraph, hmms: Mapping[str, UnitHmm], penalty: float):
        labels = graph.node_labels
        missing = sorted({l for l in labels[1:] if l not in hmms})
        if missing:
            raise InvalidInputError(f"no HMM for unit(s): {', '.join(missing)}")
        dims = {hmms[l].D for l in labels[1:]}
        if len(dims) > 1:
            raise InvalidInputError("unit HMMs disagree on feature dimension")
        self.graph = graph
        self.hmms = hmms
        self.D = dims.pop() if dims else None

        self.units = sorted({l for l in labels[1:]})
        col = {}
        width = 0
        for l in self.units:
            col[l] = width
            width += hmms[l].S
        self.unit_col = col

        first, last, node_of, emis, lself, lnext = [], [], [], [], [], []
        self.first_q = np.full(graph.n_nodes, -1)
        self.last_q = np.full(graph.n_nodes, -1)
        q = 0
        for n in range(1, graph.n_nodes):
            h = hmms[labels[n]]
            self.first_q[n] = q
            self.last_q[n] = q + h.S - 1
            for j in range(h.S):
                first.append(j == 0)
                node_of.append(n)
                emis.append(col[labels[n]] + j)
                lself.append(h.log_self[j])
                lnext.append(h.log_next[j])
            q += h.S
        self.Q = q
        self.is_first = np.array(first, dtype=bool)
        self.node_of = np.array(node_of, dtype=int)
        self.emis_col = np.array(emis, dtype=int)
        self.lself = np.array(lself)
        self.lnext = np.array(lnext)

        # arcs grouped by destination, sources ordered by label for tie-breaks
        def src_key(a):
            src, dst, _ = a
            return (dst, "" if src == 0 else labels[src], src)

        arcs = sorted(graph.arcs, key=src_key)
        self.arc_src = np.array([a[0] for a in arcs], dtype=int)
        self.arc_dst = np.array([a[1] for a in arcs], dtype=int)
        self.arc_lp = np.array([a[2] for a in arcs], dtype=float)
        self.arc_cost = self.arc_lp - penalty
        if len(arcs):
            starts = np.flatnonzero(np.r_[True, self.arc_dst[1:] != self.arc_dst[:-1]])
        else:
            starts = np.zeros(0, dtype=int)
        self.group_start = starts
        self.group_dst = self.arc_dst[starts]
        self.group_of_arc = np.repeat(np.arange(len(starts)), np.diff(np.r_[starts, len(arcs)]))

        # final-node preference: by label, then node index
        self.final_order = sorted(range(1, graph.n_nodes), key=lambda n: (labels[n], n))

    def emissions(self, seq) -> np.ndarray:
        return np.concatenate([self.hmms[l].emission_log_prob(seq) for l in self.units], axis=1)


def decode(
    seq,
    hmms: Mapping[str, UnitHmm],
    model,
    unit_insertion_penalty: float = 0.0,
    beam: Optional[float] = None,
) -> Segmentation:
    """Most probable unit sequence and its frame boundaries.

    Parameters
    ----------
    seq : array_like, shape (T, D)
    hmms : mapping of label to UnitHmm
    model : PathGrammar, BigramModel or DecodingGraph
    unit_insertion_penalty : float
        Subtracted from the log-score once per decoded unit; larger values
        favour fewer, longer spans.
    beam : float, optional
        Prune composite states scoring more than ``beam`` below the best at
        each frame. None (default) decodes exactly.

    Returns
    -------
    Segmentation
        Span scores hold the unit's emission and transition log-probability
        (exit included); ``total`` adds sequence-model terms and penalties.

    Raises
    ------
    NoPathError
        If no grammar path fits into ``T`` frames.
    """
    X = np.asarray(seq, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("sequence must be a non-empty T x D matrix")
    T = X.shape[0]
    graph = _graph_of(model)
    net = _Network(graph, hmms, float(unit_insertion_penalty))
    if net.D is not None and net.D != X.shape[1]:
        raise InvalidInputError(f"dimension mismatch: HMMs have D={net.D}, sequence has {X.shape[1]}")
    need = min_frames(graph, hmms)
    if need is None:
        raise NoPathError("sequence model has no complete path", T, None)
    if need > T:
        raise NoPathError(f"shortest grammar path needs {need} frames, sequence has {T}", T, need)

    E = net.emissions(X)[:, net.emis_col]
    N = graph.n_nodes
    moved = np.zeros((T, net.Q), dtype=bool)
    entry_src = np.full((T, N), -1, dtype=np.int32)
    delta = np.full(net.Q, NEG_INF)
    exit_prev = np.full(N, NEG_INF)
    exit_prev[0] = 0.0
    n_groups = len(net.group_start)
    arc_idx = np.arange(len(net.arc_src))

    for t in range(T):
        entry = np.full(net.Q, NEG_INF)
        if n_groups:
            cand = exit_prev[net.arc_src] + net.arc_cost
            best = np.maximum.reduceat(cand, net.group_start)
            tied = cand >= (best - _slack(best))[net.group_of_arc]
            hit = np.where(tied & (cand > NEG_INF), arc_idx, len(arc_idx))
            first_hit = np.minimum.reduceat(hit, net.group_start)
            ok = best > NEG_INF
            entry[net.first_q[net.group_dst[ok]]] = cand[first_hit[ok]]
            entry_src[t, net.group_dst[ok]] = net.arc_src[first_hit[ok]]
        stay = delta + net.lself
        move = np.empty(net.Q)
        move[1:] = delta[:-1] + net.lnext[:-1]
        move[0] = NEG_INF
        move[net.is_first] = entry[net.is_first]
        moved[t] = move > stay + _slack(stay)
        delta = np.where(moved[t], move, stay) + E[t]
        if beam is not None and np.isfinite(beam):
            top = delta.max()
            if top > NEG_INF:
                delta[delta < top - beam] = NEG_INF
        exit_prev = np.full(N, NEG_INF)
        exit_prev[1:] = delta[net.last_q[1:]] + net.lnext[net.last_q[1:]]

    final = exit_prev + graph.end_logp
    best_node, best_score = -1, NEG_INF
    for n in net.final_order:
        if final[n] > best_score + _slack(best_score):
            best_node, best_score = n, final[n]
    if best_node < 0:
        raise NoPathError("no path survives decoding", T, need)

    # backtrace
    spans_rev = []
    node = best_node
    q = net.last_q[node]
    end = T
    for t in range(T - 1, -1, -1):
        if moved[t, q]:
            if net.is_first[q]:
                src = entry_src[t, node]
                spans_rev.append((node, t, end))
                end = t
                if src == 0:
                    break
                node = src
                q = net.last_q[node]
            else:
                q -= 1
    if end != 0:
        raise AssertionError("backtrace did not reach the start node")
    spans_rev.reverse()

    labels = graph.node_labels
    spans = []
    for node, s, e in spans_rev:
        label = labels[node]
        score = viterbi_align(hmms[label], X[s:e]).log_score
        spans.append(Span(label, s, e, score))
    seg = Segmentation(spans, T, float(best_score))
    seg.meta["penalty"] = float(unit_insertion_penalty)
    return seg


def recompute_total(seq, seg: Segmentation, hmms, model, unit_insertion_penalty: float = 0.0) -> float:
    """Independent total for a segmentation: best per-span alignments plus prior and penalties."""
    X = np.asarray(seq, dtype=float)
    acoustic = sum(viterbi_align(hmms[s.label], X[s.start:s.end]).log_score for s in seg.spans)
    prior = model.log_prior(seg.labels)
    return float(acoustic + prior - len(seg.spans) * unit_insertion_penalty)


@dataclass
class ClassificationResult:
    label: str
    scores: Dict[str, float]
    segmentation: Optional[Segmentation]


def classify_activity(
    seq,
    bundles: Mapping[str, Tuple[Mapping[str, UnitHmm], object]],
    unit_insertion_penalty: float = 0.0,
    beam: Optional[float] = None,
    threads: int = 1,
) -> ClassificationResult:
    """Decode under every activity's grammar and keep the highest total.

    Activities without a valid path score ``-inf``. Equal totals go to the
    activity name that sorts first.
    """
    if not bundles:
        raise InvalidInputError("need at least one activity bundle")
    names = sorted(bundles)

    def run(name):
        hmms, model = bundles[name]
        try:
            return decode(seq, hmms, model, unit_insertion_penalty, beam)
        except NoPathError:
            return None

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, names))
    else:
        results = [run(n) for n in names]
    scores = {n: (r.total if r is not None else NEG_INF) for n, r in zip(names, results)}
    best, best_seg, best_score = None, None, NEG_INF
    for n, r in zip(names, results):
        if r is not None and r.total > best_score:
            best, best_seg, best_score = n, r, r.total
    if best is None:
        raise NoPathError("no activity admits a path for this sequence", len(seq), None)
    return ClassificationResult(best, scores, best_seg)
