"""Training-set preparation and synthetic data.

``balance_classes`` enforces per-unit sample counts, over-sampling rare
units with a sequence variant of SMOTE. ``generate_dataset`` draws labelled
frame sequences from known left-to-right generators and is the ground
truth used by the end-to-end tests.
"""

from __future__ import annotations

import configparser
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError
from .grammar import END, START, BigramModel, PathGrammar, build_bigram, build_path_grammar
from .sequences import FrameSequence, Segmentation, Span


@dataclass(eq=False)
class LabeledSegment:
    label: str
    frames: np.ndarray
    source: str = "real"

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise InvalidInputError("segment frames must be a non-empty T x D matrix")
        if not np.all(np.isfinite(self.frames)):
            raise InvalidInputError("segment frames must be finite")
        if self.source not in ("real", "synthetic"):
            raise InvalidInputError(f"unknown segment source {self.source!r}")


def _label_rng(seed, label):
    return np.random.default_rng([int(seed), zlib.crc32(label.encode("utf-8"))])


def rescale_time(frames, length: int) -> np.ndarray:
    """Nearest-frame resampling of a ``T x D`` sequence to ``length`` frames."""
    frames = np.asarray(frames)
    T = frames.shape[0]
    idx = np.floor((np.arange(length) + 0.5) * T / length).astype(int)
    return frames[np.minimum(idx, T - 1)]


def smote_pair(first, second, lam: float) -> np.ndarray:
    """Convex combination ``(1 - lam) * first + lam * second``.

    The shorter parent is first stretched to the longer one's length.
    """
    a = np.asarray(first, dtype=float)
    b = np.asarray(second, dtype=float)
    T = max(a.shape[0], b.shape[0])
    if a.shape[0] != T:
        a = rescale_time(a, T)
    if b.shape[0] != T:
        b = rescale_time(b, T)
    return (1.0 - lam) * a + lam * b


def balance_classes(
    segments_by_label: Mapping[str, Sequence],
    min_n: int,
    max_n: int,
    seed=0,
) -> Dict[str, List[LabeledSegment]]:
    """Bring every class to between ``min_n`` and ``max_n`` samples.

    Large classes are subsampled uniformly without replacement (original
    order kept). Small classes are topped up with synthetic samples, each
    mixing two random members of the class with a uniform weight. Random
    streams are keyed by ``(seed, label)``, so one class's result does not
    depend on which other classes are present.
    """
    if min_n > max_n:
        raise InvalidInputError(f"min_n={min_n} exceeds max_n={max_n}")
    out = {}
    for label in sorted(segments_by_label):
        segs = [
            s if isinstance(s, LabeledSegment) else LabeledSegment(label, s)
            for s in segments_by_label[label]
        ]
        if not segs:
            raise InvalidInputError(f"class {label!r} has no samples")
        rng = _label_rng(seed, label)
        n = len(segs)
        if n > max_n:
            keep = np.sort(rng.choice(n, max_n, replace=False))
            segs = [segs[i] for i in keep]
        elif n < min_n:
            segs = list(segs)
            for _ in range(min_n - n):
                i, j = rng.choice(n, 2, replace=n < 2)
                lam = rng.uniform()
                frames = smote_pair(segs[i].frames, segs[j].frames, lam)
                segs.append(LabeledSegment(label, frames, "synthetic"))
        out[label] = segs
    return out


@dataclass
class UnitSpec:
    """Generator of one action unit: per-state Gaussians and a duration range."""

    means: np.ndarray
    variances: np.ndarray
    duration: Tuple[int, int]

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=float))
        self.duration = (int(self.duration[0]), int(self.duration[1]))

    @property
    def S(self) -> int:
        return self.means.shape[0]


@dataclass
class DatasetSpec:
    units: Dict[str, UnitSpec]
    model: object
    n_sequences: int
    seed: int = 0
    frame_rate: Optional[float] = None
    max_units: int = 100

    def violations(self) -> List[str]:
        problems = []
        if not self.units:
            problems.append("no units defined")
        dims = set()
        for label, u in sorted(self.units.items()):
            if u.means.shape != u.variances.shape:
                problems.append(f"unit {label}: means and variances differ in shape")
            if np.any(~(u.variances > 0)):
                problems.append(f"unit {label}: variances must be positive")
            lo, hi = u.duration
            if lo > hi:
                problems.append(f"unit {label}: duration range {lo}..{hi} is empty")
            if lo < u.S:
                problems.append(f"unit {label}: minimum duration {lo} below state count {u.S}")
            dims.add(u.means.shape[1])
        if len(dims) > 1:
            problems.append(f"units disagree on dimension: {sorted(dims)}")
        if self.model is None:
            problems.append("no sequence model")
        else:
            for label in self.model.vocabulary:
                if label not in self.units:
                    problems.append(f"sequence model uses undefined unit {label}")
        if self.n_sequences < 1:
            problems.append("n_sequences must be >= 1")
        return problems

    def validate(self):
        problems = self.violations()
        if problems:
            raise InvalidInputError("invalid dataset spec: " + "; ".join(problems))

    @property
    def D(self) -> int:
        return next(iter(self.units.values())).means.shape[1]


@dataclass
class SyntheticDataset:
    sequences: List[FrameSequence]
    annotations: List[Segmentation]
    state_paths: List[np.ndarray] = field(default_factory=list)


def _sample_labels(model, rng, max_units):
    if isinstance(model, PathGrammar):
        return list(model.sequences[rng.integers(len(model.sequences))])
    if isinstance(model, BigramModel):
        labels = []
        prev = START
        while True:
            options = model.vocabulary + ([END] if prev != START else [])
            probs = np.exp([model.transition(prev, o) for o in options])
            nxt = options[rng.choice(len(options), p=probs / probs.sum())]
            if nxt == END or len(labels) >= max_units:
                return labels
            labels.append(nxt)
            prev = nxt
    raise InvalidInputError(f"unsupported sequence model {type(model).__name__}")


def generate_dataset(spec: DatasetSpec) -> SyntheticDataset:
    """Sample labelled sequences from a :class:`DatasetSpec`.

    Sequence ``i`` uses a generator seeded by ``(spec.seed, i)``. Unit
    durations are uniform over the unit's range; within a unit, every state
    gets at least one frame and the remainder is spread multinomially.
    """
    spec.validate()
    sequences, annotations, paths = [], [], []
    for i in range(spec.n_sequences):
        rng = np.random.default_rng([int(spec.seed), i])
        labels = _sample_labels(spec.model, rng, spec.max_units)
        chunks, spans, states = [], [], []
        t = 0
        for label in labels:
            u = spec.units[label]
            lo, hi = u.duration
            dur = int(rng.integers(lo, hi + 1))
            per_state = rng.multinomial(dur - u.S, np.full(u.S, 1.0 / u.S)) + 1
            owner = np.repeat(np.arange(u.S), per_state)
            noise = rng.standard_normal((dur, u.means.shape[1]))
            chunks.append(u.means[owner] + np.sqrt(u.variances[owner]) * noise)
            states.append(owner)
            spans.append(Span(label, t, t + dur))
            t += dur
        sequences.append(FrameSequence(np.concatenate(chunks), spec.frame_rate, f"seq_{i:04d}"))
        annotations.append(Segmentation(spans, t))
        paths.append(np.concatenate(states))
    return SyntheticDataset(sequences, annotations, paths)


DEMO_UNITS = ("reach", "grasp", "pour", "stir", "place")
DEMO_PATHS = (
    ("reach", "grasp", "pour", "place"),
    ("reach", "grasp", "stir", "place"),
    ("reach", "pour", "stir", "place"),
    ("grasp", "pour", "stir"),
    ("reach", "grasp", "pour", "stir", "place"),
)


def separated_means(n: int, dim: int, separation: float, seed=0, scale: float = None) -> np.ndarray:
    """``n`` points in ``dim`` dims with every pairwise distance >= ``separation``."""
    rng = np.random.default_rng(seed)
    scale = separation if scale is None else scale
    points = []
    for _ in range(100_000):
        p = rng.normal(scale=scale, size=dim)
        if all(np.linalg.norm(p - q) >= separation for q in points):
            points.append(p)
            if len(points) == n:
                return np.array(points)
    raise InvalidInputError("could not place separated means; increase scale or dim")


def demo_spec(n_sequences: int = 60, seed: int = 0, dim: int = 6, states: int = 3,
              separation: float = 4.0, duration=(20, 40)) -> DatasetSpec:
    """Five-unit kitchen-style path grammar with unit-variance, well separated states.

    The emission layout is fixed (independent of ``seed``) so train and test
    sets drawn with different seeds share generators.
    """
    means = separated_means(len(DEMO_UNITS) * states, dim, separation, seed=20150101)
    units = {
        label: UnitSpec(means[i * states:(i + 1) * states], np.ones((states, dim)), duration)
        for i, label in enumerate(DEMO_UNITS)
    }
    return DatasetSpec(units, build_path_grammar(DEMO_PATHS), n_sequences, seed)


def _matrix(text: str) -> np.ndarray:
    rows = [r.split() for r in text.split(";") if r.strip()]
    return np.array(rows, dtype=float)


def load_dataset_spec(text: str) -> DatasetSpec:
    """Parse an INI-style dataset description.

    ::

        [dataset]
        sequences = 60
        seed = 0
        model = path            ; or bigram (unsmoothed, from the paths)
        paths = A B C | A C

        [unit A]
        duration = 20 40
        means = 0 0; 4 0        ; one row per state
        variances = 1 1; 1 1
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise InvalidInputError(f"invalid dataset spec: {exc}") from None
    problems = []
    if not cp.has_section("dataset"):
        raise InvalidInputError("invalid dataset spec: missing [dataset] section")
    ds = cp["dataset"]
    units = {}
    for section in cp.sections():
        if not section.startswith("unit "):
            continue
        label = section[5:].strip()
        sec = cp[section]
        try:
            dur = [int(v) for v in sec.get("duration", "").split()]
            if len(dur) == 1:
                dur = dur * 2
            units[label] = UnitSpec(_matrix(sec["means"]), _matrix(sec["variances"]), tuple(dur))
        except (KeyError, ValueError, IndexError) as exc:
            problems.append(f"unit {label}: {exc}")
    paths = [p.split() for p in ds.get("paths", "").split("|") if p.strip()]
    if not paths:
        problems.append("dataset.paths is empty")
    if problems:
        raise InvalidInputError("invalid dataset spec: " + "; ".join(problems))
    variant = ds.get("model", "path")
    if variant == "path":
        model = build_path_grammar(paths)
    elif variant == "bigram":
        model = build_bigram(paths, smoothing_k=0.0)
    else:
        raise InvalidInputError(f"invalid dataset spec: unknown model {variant!r}")
    spec = DatasetSpec(
        units,
        model,
        ds.getint("sequences", 1),
        ds.getint("seed", 0),
        ds.getfloat("frame_rate", None),
    )
    spec.validate()
    return spec


def dump_dataset_spec(spec: DatasetSpec) -> str:
    """Inverse of :func:`load_dataset_spec` for path-grammar specs."""
    if not isinstance(spec.model, PathGrammar):
        raise InvalidInputError("only path-grammar specs can be written")
    lines = ["[dataset]", f"sequences = {spec.n_sequences}", f"seed = {spec.seed}"]
    if spec.frame_rate is not None:
        lines.append(f"frame_rate = {spec.frame_rate!r}")
    lines.append("model = path")
    lines.append("paths = " + " | ".join(" ".join(p) for p in spec.model.sequences))
    for label, u in spec.units.items():
        lines += ["", f"[unit {label}]", f"duration = {u.duration[0]} {u.duration[1]}"]
        lines.append("means = " + "; ".join(" ".join(repr(float(v)) for v in r) for r in u.means))
        lines.append("variances = " + "; ".join(" ".join(repr(float(v)) for v in r) for r in u.variances))
    return "\n".join(lines) + "\n"
