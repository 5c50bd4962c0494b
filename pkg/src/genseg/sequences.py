"""Frame sequences and labeled segmentations passed between pipeline stages."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInputError


@dataclass(eq=False)
class FrameSequence:
    """A ``T x D`` matrix of per-frame descriptors.

    Parameters
    ----------
    frames : ndarray, shape (T, D)
    frame_rate : float, optional
        Frames per second, if known. Not stored in the binary file format.
    name : str, optional
        Identifier, usually the file basename.
    """

    frames: np.ndarray
    frame_rate: Optional[float] = None
    name: Optional[str] = None

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=float)
        if frames.ndim == 1:
            frames = frames[:, None]
        if frames.ndim != 2:
            raise InvalidInputError("frames must be a T x D matrix")
        self.frames = frames

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def D(self) -> int:
        return self.frames.shape[1]

    def __len__(self):
        return self.T


@dataclass(frozen=True)
class Span:
    label: str
    start: int
    end: int
    score: float = 0.0

    @property
    def length(self) -> int:
        return self.end - self.start

    @property
    def midpoint(self) -> int:
        return (self.start + self.end - 1) // 2


@dataclass
class Segmentation:
    """Ordered, contiguous labeled spans covering ``[0, T)``.

    ``total`` is the decoder's log-score for the whole path; ground-truth
    annotations leave it at 0.
    """

    spans: list
    T: int
    total: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.spans = list(self.spans)
        pos = 0
        for span in self.spans:
            if span.start != pos or span.end <= span.start:
                raise InvalidInputError(
                    f"spans must be contiguous and non-empty; got {span} at frame {pos}"
                )
            pos = span.end
        if pos != self.T:
            raise InvalidInputError(f"spans cover [0, {pos}) but T={self.T}")

    @classmethod
    def from_labels(cls, labels: Sequence[str], boundaries: Sequence[int], T: int):
        """Build from unit labels and their start frames."""
        starts = list(boundaries)
        ends = starts[1:] + [T]
        return cls([Span(l, s, e) for l, s, e in zip(labels, starts, ends)], T)

    @classmethod
    def from_frame_labels(cls, frame_labels: Sequence[str]):
        spans = []
        start = 0
        for t in range(1, len(frame_labels) + 1):
            if t == len(frame_labels) or frame_labels[t] != frame_labels[start]:
                spans.append(Span(str(frame_labels[start]), start, t))
                start = t
        return cls(spans, len(frame_labels))

    @property
    def labels(self) -> list:
        return [s.label for s in self.spans]

    @property
    def boundaries(self) -> list:
        return [s.start for s in self.spans]

    def frame_labels(self) -> np.ndarray:
        out = np.empty(self.T, dtype=object)
        for s in self.spans:
            out[s.start:s.end] = s.label
        return out

    def __len__(self):
        return len(self.spans)
