"""On-disk formats for sequences, annotations, models and decoder output.

Text formats write floats with 17 significant digits so models survive a
write/read round trip bit for bit.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterator, List, Tuple

import numpy as np

from .errors import DataError, GensegError
from .gmm import DiagonalGmm
from .grammar import BigramModel, PathGrammar
from .hmm import UnitHmm
from .pca import PcaModel
from .sequences import FrameSequence, Segmentation, Span

SEQ_MAGIC = b"GSEQ1"
_SEQ_HEADER = struct.Struct("<II")


def fmt(x: float) -> str:
    return "%.17g" % x


def _row(values) -> str:
    return " ".join(fmt(v) for v in values)


# -- frame sequences ---------------------------------------------------------

def write_sequence(path, seq) -> None:
    frames = seq.frames if isinstance(seq, FrameSequence) else np.asarray(seq)
    T, D = frames.shape
    data = np.ascontiguousarray(frames, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(SEQ_MAGIC + _SEQ_HEADER.pack(T, D) + data.tobytes())


def read_sequence(path) -> FrameSequence:
    """Read a binary ``GSEQ1`` file, or a CSV file (one frame per row)."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_csv_sequence(path)
    raw = path.read_bytes()
    if raw[:5] != SEQ_MAGIC:
        raise DataError(path, 0, "missing GSEQ1 magic")
    if len(raw) < 5 + _SEQ_HEADER.size:
        raise DataError(path, len(raw), "truncated header")
    T, D = _SEQ_HEADER.unpack_from(raw, 5)
    start = 5 + _SEQ_HEADER.size
    expected = start + 4 * T * D
    if len(raw) != expected:
        raise DataError(path, min(len(raw), expected), f"expected {expected} bytes for T={T}, D={D}, found {len(raw)}")
    if T == 0 or D == 0:
        raise DataError(path, 5, "empty sequence")
    frames = np.frombuffer(raw, dtype="<f4", offset=start).reshape(T, D).astype(float)
    if not np.all(np.isfinite(frames)):
        bad = int(np.flatnonzero(~np.isfinite(frames.ravel()))[0])
        raise DataError(path, start + 4 * bad, "non-finite value")
    return FrameSequence(frames, name=path.stem)


def read_csv_sequence(path) -> FrameSequence:
    path = Path(path)
    rows = []
    width = None
    for offset, line in _lines(path):
        if not line.strip():
            continue
        try:
            vals = [float(v) for v in line.split(",")]
        except ValueError:
            raise DataError(path, offset, "non-numeric CSV field") from None
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise DataError(path, offset, f"expected {width} columns, found {len(vals)}")
        if not all(np.isfinite(vals)):
            raise DataError(path, offset, "non-finite value")
        rows.append(vals)
    if not rows:
        raise DataError(path, 0, "empty CSV sequence")
    return FrameSequence(np.array(rows), name=path.stem)


# -- text helpers ------------------------------------------------------------

def _lines(path) -> Iterator[Tuple[int, str]]:
    raw = Path(path).read_bytes()
    offset = 0
    for chunk in raw.splitlines(keepends=True):
        try:
            text = chunk.decode("utf-8")
        except UnicodeDecodeError:
            raise DataError(path, offset, "invalid UTF-8") from None
        yield offset, text.rstrip("\r\n")
        offset += len(chunk)


class _Reader:
    def __init__(self, path, lines=None):
        self.path = Path(path)
        self.lines: List[Tuple[int, str]] = list(lines if lines is not None else _lines(path))
        self.pos = 0

    @property
    def offset(self) -> int:
        if self.pos < len(self.lines):
            return self.lines[self.pos][0]
        return self.lines[-1][0] + len(self.lines[-1][1]) if self.lines else 0

    def fail(self, reason):
        raise DataError(self.path, self.offset, reason)

    def next(self) -> str:
        if self.pos >= len(self.lines):
            self.fail("unexpected end of file")
        line = self.lines[self.pos][1]
        self.pos += 1
        return line

    def floats(self, n: int) -> np.ndarray:
        off = self.offset
        parts = self.next().split()
        if len(parts) != n:
            raise DataError(self.path, off, f"expected {n} values, found {len(parts)}")
        try:
            return np.array([float(p) for p in parts])
        except ValueError:
            raise DataError(self.path, off, "malformed number") from None

    def header(self, magic: str) -> dict:
        off = self.offset
        parts = self.next().split()
        if parts[:2] != [magic, "v1"]:
            raise DataError(self.path, off, f"expected '{magic} v1' header")
        fields = {}
        for p in parts[2:]:
            key, sep, value = p.partition("=")
            if not sep:
                raise DataError(self.path, off, f"malformed header field {p!r}")
            fields[key] = value
        return fields

    def int_field(self, fields, key) -> int:
        try:
            value = int(fields[key])
        except (KeyError, ValueError):
            self.fail(f"header field {key} missing or not an integer")
        if value < 1:
            self.fail(f"header field {key} must be >= 1")
        return value


# -- GMM ---------------------------------------------------------------------

def dump_gmm(gmm: DiagonalGmm) -> str:
    lines = [f"genseg-gmm v1 K={gmm.K} D={gmm.D}", _row(gmm.weights)]
    lines += [_row(m) for m in gmm.means]
    lines += [_row(v) for v in gmm.variances]
    return "\n".join(lines) + "\n"


def _read_gmm(r: _Reader) -> DiagonalGmm:
    start = r.offset
    fields = r.header("genseg-gmm")
    K, D = r.int_field(fields, "K"), r.int_field(fields, "D")
    w = r.floats(K)
    means = np.stack([r.floats(D) for _ in range(K)])
    var = np.stack([r.floats(D) for _ in range(K)])
    try:
        return DiagonalGmm(w, means, var)
    except GensegError as exc:
        raise DataError(r.path, start, str(exc)) from None


def write_gmm(path, gmm: DiagonalGmm) -> None:
    Path(path).write_text(dump_gmm(gmm), encoding="utf-8")


def read_gmm(path) -> DiagonalGmm:
    r = _Reader(path)
    gmm = _read_gmm(r)
    if r.pos != len(r.lines):
        r.fail("trailing content")
    return gmm


# -- PCA ---------------------------------------------------------------------

def write_pca(path, pca: PcaModel) -> None:
    lines = [
        f"genseg-pca v1 M={pca.M} Dp={pca.out_dim} whiten={int(pca.whiten)} epsilon={fmt(pca.epsilon)}",
        _row(pca.mean),
        _row(pca.eigenvalues),
    ]
    lines += [_row(b) for b in pca.basis]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_pca(path) -> PcaModel:
    r = _Reader(path)
    fields = r.header("genseg-pca")
    M, Dp = r.int_field(fields, "M"), r.int_field(fields, "Dp")
    try:
        whiten = bool(int(fields.get("whiten", "1")))
        eps = float(fields.get("epsilon", "1e-8"))
    except ValueError:
        raise DataError(r.path, 0, "malformed whiten/epsilon header field") from None
    mean = r.floats(M)
    evals = r.floats(Dp)
    basis = np.stack([r.floats(Dp) for _ in range(M)])
    if r.pos != len(r.lines):
        r.fail("trailing content")
    return PcaModel(mean, basis, evals, whiten, eps)


# -- HMM ---------------------------------------------------------------------

def dump_hmm(hmm: UnitHmm) -> str:
    lines = [f"genseg-hmm v1 label={hmm.label} S={hmm.S} D={hmm.D}"]
    lines += [_row((a, b)) for a, b in zip(hmm.log_self, hmm.log_next)]
    text = "\n".join(lines) + "\n"
    return text + "".join(dump_gmm(g) for g in hmm.states)


def write_hmm(path, hmm: UnitHmm) -> None:
    Path(path).write_text(dump_hmm(hmm), encoding="utf-8")


def read_hmm(path) -> UnitHmm:
    r = _Reader(path)
    fields = r.header("genseg-hmm")
    label = fields.get("label")
    if not label:
        r.fail("header field label missing")
    S, D = r.int_field(fields, "S"), r.int_field(fields, "D")
    trans = np.stack([r.floats(2) for _ in range(S)])
    states = []
    for _ in range(S):
        g = _read_gmm(r)
        if g.D != D:
            r.fail(f"state density has D={g.D}, header says {D}")
        states.append(g)
    if r.pos != len(r.lines):
        r.fail("trailing content")
    try:
        return UnitHmm(label, trans[:, 0], trans[:, 1], states)
    except GensegError as exc:
        raise DataError(path, 0, str(exc)) from None


def write_hmm_dir(directory, hmms) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for label in sorted(hmms):
        write_hmm(directory / f"{label}.hmm", hmms[label])


def read_hmm_dir(directory) -> dict:
    hmms = {}
    for path in sorted(Path(directory).glob("*.hmm")):
        h = read_hmm(path)
        hmms[h.label] = h
    return hmms


# -- sequence models ---------------------------------------------------------

def dump_grammar(model) -> str:
    if isinstance(model, PathGrammar):
        return "".join(" ".join(s) + "\n" for s in model.sequences)
    lines = ["bigram"]
    for (prev, nxt), lp in sorted(model.logp.items()):
        lines.append(f"{prev} {nxt} {fmt(lp)}")
    return "\n".join(lines) + "\n"


def write_grammar(path, model) -> None:
    Path(path).write_text(dump_grammar(model), encoding="utf-8")


def read_grammar(path):
    lines = [(o, l) for o, l in _lines(path) if l.strip()]
    if not lines:
        raise DataError(path, 0, "empty grammar file")
    if lines[0][1].strip() != "bigram":
        try:
            return PathGrammar([l.split() for _, l in lines])
        except GensegError as exc:
            raise DataError(path, 0, str(exc)) from None
    logp = {}
    vocab = set()
    for off, line in lines[1:]:
        parts = line.split()
        if len(parts) != 3:
            raise DataError(path, off, "expected 'prev next logp'")
        try:
            lp = float(parts[2])
        except ValueError:
            raise DataError(path, off, "malformed log-probability") from None
        logp[parts[0], parts[1]] = lp
        vocab.update(p for p in parts[:2] if p not in ("<s>", "</s>"))
    return BigramModel(sorted(vocab), logp)


# -- annotations and segmentations --------------------------------------------

def dump_annotation(seg: Segmentation) -> str:
    return "".join(f"{s.label} {s.start} {s.end}\n" for s in seg.spans)


def write_annotation(path, seg: Segmentation) -> None:
    Path(path).write_text(dump_annotation(seg), encoding="utf-8")


def _parse_spans(path, lines, n_fields):
    spans = []
    for off, line in lines:
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != n_fields:
            raise DataError(path, off, f"expected {n_fields} fields per span")
        try:
            start, end = int(parts[1]), int(parts[2])
            score = float(parts[3]) if n_fields == 4 else 0.0
        except ValueError:
            raise DataError(path, off, "malformed span") from None
        expected = spans[-1].end if spans else 0
        if start != expected or end <= start:
            raise DataError(path, off, f"span [{start}, {end}) does not continue at frame {expected}")
        spans.append(Span(parts[0], start, end, score))
    if not spans:
        raise DataError(path, 0, "no spans")
    return spans


def read_annotation(path) -> Segmentation:
    spans = _parse_spans(path, list(_lines(path)), 3)
    return Segmentation(spans, spans[-1].end)


def dump_segmentation(seg: Segmentation) -> str:
    lines = [f"genseg-seg v1 T={seg.T} total={fmt(seg.total)}"]
    lines += [f"{s.label} {s.start} {s.end} {fmt(s.score)}" for s in seg.spans]
    return "\n".join(lines) + "\n"


def write_segmentation(path, seg: Segmentation) -> None:
    Path(path).write_text(dump_segmentation(seg), encoding="utf-8")


def read_segmentation(path) -> Segmentation:
    """Read decoder output, or a plain ``label start end`` annotation."""
    r = _Reader(path)
    if not r.lines:
        raise DataError(path, 0, "empty file")
    if not r.lines[0][1].startswith("genseg-seg"):
        return read_annotation(path)
    fields = r.header("genseg-seg")
    T = r.int_field(fields, "T")
    try:
        total = float(fields["total"])
    except (KeyError, ValueError):
        raise DataError(path, 0, "header field total missing or malformed") from None
    spans = _parse_spans(path, r.lines[1:], 4)
    if spans[-1].end != T:
        raise DataError(path, r.lines[-1][0], f"spans end at {spans[-1].end}, header says T={T}")
    return Segmentation(spans, T, total)
