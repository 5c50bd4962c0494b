"""Segmentation and classification metrics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InvalidInputError
from .sequences import Segmentation


def _check_pair(gt: Segmentation, pred: Segmentation):
    if gt.T != pred.T:
        raise InvalidInputError(f"length mismatch: ground truth T={gt.T}, prediction T={pred.T}")


def _kept(gt_frames, exclude):
    if not exclude:
        return np.ones(len(gt_frames), dtype=bool)
    return ~np.isin(gt_frames, list(exclude))


def frame_accuracy(gt: Segmentation, pred: Segmentation, exclude: Iterable[str] = ()) -> float:
    """Fraction of frames whose predicted label matches the ground truth.

    Frames whose ground-truth label is in ``exclude`` are ignored.
    """
    _check_pair(gt, pred)
    g, p = gt.frame_labels(), pred.frame_labels()
    keep = _kept(g, tuple(exclude))
    if not keep.any():
        raise InvalidInputError("no frames left to evaluate")
    return float(np.mean(g[keep] == p[keep]))


@dataclass
class ConfusionMatrix:
    """Frame counts, rows indexed by ground truth and columns by prediction."""

    labels: list
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        labels = sorted(set(self.labels) | set(other.labels))
        out = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for cm in (self, other):
            idx = [labels.index(l) for l in cm.labels]
            out[np.ix_(idx, idx)] += cm.counts
        return ConfusionMatrix(labels, out)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([""] + self.labels)
        for label, row in zip(self.labels, self.counts):
            w.writerow([label] + [int(c) for c in row])
        return buf.getvalue()


def confusion_matrix(
    gt: Segmentation,
    pred: Segmentation,
    labels: Optional[Sequence[str]] = None,
    exclude: Iterable[str] = (),
) -> ConfusionMatrix:
    _check_pair(gt, pred)
    g, p = gt.frame_labels(), pred.frame_labels()
    keep = _kept(g, tuple(exclude))
    g, p = g[keep], p[keep]
    if labels is None:
        labels = sorted(set(g) | set(p))
    labels = list(labels)
    index = {l: i for i, l in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    np.add.at(counts, ([index[x] for x in g], [index[x] for x in p]), 1)
    return ConfusionMatrix(labels, counts)


def class_mean_accuracy(cm: ConfusionMatrix) -> float:
    """Mean per-class recall; classes with no ground-truth frames are skipped."""
    rows = cm.counts.sum(axis=1)
    present = rows > 0
    if not present.any():
        raise InvalidInputError("confusion matrix has no ground-truth frames")
    return float(np.mean(np.diag(cm.counts)[present] / rows[present]))


def midpoint_hit_accuracy(gt: Segmentation, pred: Segmentation) -> float:
    """Share of ground-truth spans hit by a same-label prediction midpoint.

    Predictions are visited left to right; each ground-truth span can be
    claimed once.
    """
    _check_pair(gt, pred)
    if not gt.spans:
        raise InvalidInputError("ground truth has no spans")
    owner = np.empty(gt.T, dtype=int)
    for i, s in enumerate(gt.spans):
        owner[s.start:s.end] = i
    matched = [False] * len(gt.spans)
    hits = 0
    for s in pred.spans:
        i = owner[s.midpoint]
        if not matched[i] and gt.spans[i].label == s.label:
            matched[i] = True
            hits += 1
    return hits / len(gt.spans)


def activity_accuracy(gt_labels: Sequence[str], pred_labels: Sequence[str]) -> float:
    if len(gt_labels) != len(pred_labels):
        raise InvalidInputError("label lists differ in length")
    if not gt_labels:
        raise InvalidInputError("no labels to compare")
    return float(np.mean([g == p for g, p in zip(gt_labels, pred_labels)]))


def metrics_csv(rows) -> str:
    """Render ``(metric, name, value)`` rows as CSV."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "name", "value"])
    for metric, name, value in rows:
        w.writerow([metric, name, repr(float(value))])
    return buf.getvalue()
