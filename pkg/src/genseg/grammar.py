"""Priors over unit-label sequences: path grammars and bigram models.

Both variants compile to a :class:`DecodingGraph`, the form the decoder
consumes: node 0 is the start, every other node carries one unit label,
and arcs into a node all share that node's label.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InvalidInputError, OOVError

START = "<s>"
END = "</s>"
NEG_INF = -np.inf


@dataclass(frozen=True)
class DecodingGraph:
    """Sequence model as a graph of unit-labelled nodes.

    Attributes
    ----------
    node_labels : list
        ``node_labels[0]`` is None (start node).
    arcs : list of (src, dst, logp)
    end_logp : ndarray
        Log-probability of terminating after a node's unit (``-inf`` if not
        allowed).
    """

    node_labels: list
    arcs: list
    end_logp: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.node_labels)


def _clean(annotations) -> List[Tuple[str, ...]]:
    seqs = [tuple(str(l) for l in s) for s in annotations]
    if not seqs or any(len(s) == 0 for s in seqs):
        raise InvalidInputError("need at least one annotation and no empty sequences")
    for s in seqs:
        for label in s:
            if not label or any(c.isspace() for c in label) or label in (START, END):
                raise InvalidInputError(f"invalid unit label {label!r}")
    return seqs


class PathGrammar:
    """Finite language made of exactly the observed unit sequences.

    The sequences are stored in a prefix tree; terminal nodes link to an
    implicit shared end node.
    """

    variant = "path"

    def __init__(self, sequences: Sequence[Sequence[str]]):
        seqs = _clean(sequences)
        self.sequences: List[Tuple[str, ...]] = list(dict.fromkeys(seqs))
        self._children: List[Dict[str, int]] = [{}]
        self._labels: List[Optional[str]] = [None]
        self._parent: List[int] = [-1]
        self._final: List[bool] = [False]
        for seq in self.sequences:
            node = 0
            for label in seq:
                nxt = self._children[node].get(label)
                if nxt is None:
                    nxt = len(self._labels)
                    self._children[node][label] = nxt
                    self._children.append({})
                    self._labels.append(label)
                    self._parent.append(node)
                    self._final.append(False)
                node = nxt
            self._final[node] = True
        self.vocabulary = sorted({l for s in self.sequences for l in s})

    def _walk(self, seq) -> Optional[int]:
        node = 0
        for label in seq:
            node = self._children[node].get(label)
            if node is None:
                return None
        return node

    def accepts(self, seq) -> bool:
        node = self._walk(tuple(seq))
        return node is not None and self._final[node]

    def log_prior(self, seq) -> float:
        _check_vocab(self, seq)
        return 0.0 if self.accepts(seq) else NEG_INF

    def decoding_graph(self) -> DecodingGraph:
        arcs = [(self._parent[n], n, 0.0) for n in range(1, len(self._labels))]
        end = np.where(self._final, 0.0, NEG_INF)
        return DecodingGraph(list(self._labels), arcs, end)

    @property
    def n_nodes(self) -> int:
        return len(self._labels)

    def __eq__(self, other):
        return isinstance(other, PathGrammar) and self.sequences == other.sequences

    __hash__ = None

    def __repr__(self):
        return f"PathGrammar({len(self.sequences)} paths, {len(self.vocabulary)} units)"


class BigramModel:
    """First-order Markov prior over unit labels with start and end symbols.

    ``logp[(prev, next)]`` is defined for ``prev`` in ``{START} + vocabulary``
    and ``next`` in ``vocabulary + {END}``, except ``START -> END`` (empty
    sequences are not modelled). Missing entries mean probability zero.
    """

    variant = "bigram"

    def __init__(self, vocabulary: Sequence[str], logp: Dict[Tuple[str, str], float]):
        self.vocabulary = sorted(vocabulary)
        self.logp = dict(logp)

    def transition(self, prev: str, nxt: str) -> float:
        return self.logp.get((prev, nxt), NEG_INF)

    def accepts(self, seq) -> bool:
        return np.isfinite(self.log_prior(seq))

    def log_prior(self, seq) -> float:
        seq = tuple(seq)
        _check_vocab(self, seq)
        if not seq:
            return NEG_INF
        total = 0.0
        for prev, nxt in zip((START,) + seq, seq + (END,)):
            total += self.transition(prev, nxt)
        return float(total)

    def decoding_graph(self) -> DecodingGraph:
        labels = [None] + self.vocabulary
        index = {l: i + 1 for i, l in enumerate(self.vocabulary)}
        index[START] = 0
        arcs = []
        for prev in [START] + self.vocabulary:
            for nxt in self.vocabulary:
                lp = self.transition(prev, nxt)
                if lp > NEG_INF:
                    arcs.append((index[prev], index[nxt], lp))
        end = np.array([NEG_INF] + [self.transition(l, END) for l in self.vocabulary])
        return DecodingGraph(labels, arcs, end)

    def __eq__(self, other):
        return (
            isinstance(other, BigramModel)
            and self.vocabulary == other.vocabulary
            and self.logp == other.logp
        )

    __hash__ = None

    def __repr__(self):
        return f"BigramModel({len(self.vocabulary)} units)"


SequenceModel = Union[PathGrammar, BigramModel]


def _check_vocab(model, seq):
    vocab = set(model.vocabulary)
    for label in seq:
        if label not in vocab:
            raise OOVError(label)


def build_path_grammar(annotations) -> PathGrammar:
    """Grammar accepting exactly the (deduplicated) annotated unit sequences."""
    return PathGrammar(annotations)


def bigram_counts(annotations) -> Counter:
    counts = Counter()
    for seq in annotations:
        seq = tuple(seq)
        for prev, nxt in zip((START,) + seq, seq + (END,)):
            counts[prev, nxt] += 1
    return counts


def build_bigram(annotations, smoothing_k: float = 0.01) -> BigramModel:
    """Add-k smoothed bigram model over the closed label vocabulary."""
    seqs = _clean(annotations)
    if smoothing_k < 0:
        raise InvalidInputError("smoothing_k must be non-negative")
    vocab = sorted({l for s in seqs for l in s})
    counts = bigram_counts(seqs)
    logp = {}
    for prev in [START] + vocab:
        successors = vocab if prev == START else vocab + [END]
        row = np.array([counts[prev, n] + smoothing_k for n in successors], dtype=float)
        total = row.sum()
        with np.errstate(divide="ignore"):
            lrow = np.log(row) - np.log(total)
        for nxt, lp in zip(successors, lrow):
            if lp > NEG_INF:
                logp[prev, nxt] = float(lp)
    return BigramModel(vocab, logp)


def sequence_log_prior(model: SequenceModel, seq) -> float:
    """Log prior of a label sequence: 0/-inf for a path grammar, summed bigram terms otherwise.

    Raises
    ------
    OOVError
        If ``seq`` contains a label outside the model vocabulary.
    """
    return model.log_prior(seq)
