"""Command-line entry point: one subcommand per pipeline stage.

Sequence files are binary ``.gseq`` (or ``.csv``); the annotation of
``dir/name.gseq`` lives in ``dir/name.ann``. Stages that rewrite sequences
(``encode``, ``reduce``) copy annotations along so the stages chain.

Exit codes: 0 success, 1 usage error, 2 data error, 3 no decodable path.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import formats
from .decoder import classify_activity, decode
from .errors import DataError, GensegError, InvalidInputError, NoPathError
from .evaluation import (
    activity_accuracy,
    class_mean_accuracy,
    confusion_matrix,
    frame_accuracy,
    metrics_csv,
    midpoint_hit_accuracy,
)
from .fisher import sliding_window_encode
from .gmm import fit_gmm
from .grammar import build_bigram, build_path_grammar
from .hmm import baum_welch, init_hmm
from .normality import DEFAULT_ALPHAS, dimension_pass_report
from .pca import clip_l2_per_dimension, fit_pca, project
from .training import balance_classes, demo_spec, generate_dataset, load_dataset_spec

log = logging.getLogger("genseg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NO_PATH = 0, 1, 2, 3
SEQUENCE_SUFFIXES = (".gseq", ".csv")


@dataclass
class PipelineConfig:
    """Defaults for every stage; an INI file and then CLI flags override them."""

    seed: int = 0
    threads: int = 1
    gmm_k: int = 64
    gmm_max_iters: int = 100
    max_frames: int = 0  # 0 keeps every frame when fitting GMM/PCA
    fv_window: int = 20
    pca_dim: int = 64
    pca_whiten: bool = True
    hmm_divisor: float = 10.0
    hmm_mixtures: int = 1
    hmm_iters: int = 20
    balance_min: int = 0  # 0 disables over-sampling
    balance_max: int = 0  # 0 disables subsampling
    grammar_variant: str = "path"
    bigram_smoothing: float = 0.01
    insertion_penalty: float = 0.0
    beam: float = 0.0  # 0 decodes exactly
    samples_per_dim: int = 2000

    def __post_init__(self):
        self.explicit = set()  # fields set by a config file or flag

    # INI "section.key" for each field
    _ini_keys = {
        "seed": "run.seed", "threads": "run.threads",
        "gmm_k": "gmm.k", "gmm_max_iters": "gmm.max_iters", "max_frames": "gmm.max_frames",
        "fv_window": "fv.window",
        "pca_dim": "pca.dim", "pca_whiten": "pca.whiten",
        "hmm_divisor": "hmm.divisor", "hmm_mixtures": "hmm.mixtures", "hmm_iters": "hmm.iters",
        "balance_min": "balance.min", "balance_max": "balance.max",
        "grammar_variant": "grammar.variant", "bigram_smoothing": "grammar.smoothing",
        "insertion_penalty": "decode.penalty", "beam": "decode.beam",
        "samples_per_dim": "normality.samples_per_dim",
    }

    def validate(self):
        for name in ("threads", "gmm_k", "gmm_max_iters", "fv_window", "pca_dim", "hmm_mixtures"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be >= 1")
        if self.hmm_divisor <= 0:
            raise InvalidInputError("hmm divisor must be positive")
        if min(self.max_frames, self.balance_min, self.balance_max, self.hmm_iters) < 0:
            raise InvalidInputError("counts must be non-negative")
        if self.balance_max and self.balance_min > self.balance_max:
            raise InvalidInputError("balance min exceeds max")
        if self.grammar_variant not in ("path", "bigram"):
            raise InvalidInputError(f"unknown grammar variant {self.grammar_variant!r}")

    def update_from_ini(self, path):
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            text = Path(path).read_text(encoding="utf-8")
            cp.read_string(text, source=str(path))
        except OSError as exc:
            raise DataError(path, 0, f"cannot read config: {exc.strerror}") from None
        except (configparser.Error, UnicodeDecodeError) as exc:
            raise DataError(path, 0, f"malformed config: {exc}".splitlines()[0]) from None
        known = {v: k for k, v in self._ini_keys.items()}
        for section in cp.sections():
            for key, raw in cp[section].items():
                name = known.get(f"{section}.{key}")
                if name is None:
                    raise DataError(path, 0, f"unknown config key {section}.{key}")
                setattr(self, name, _coerce(path, name, type(getattr(self, name)), raw))
                self.explicit.add(name)

    def override(self, args: argparse.Namespace):
        for f in fields(self):
            value = getattr(args, f.name, None)
            if value is not None:
                setattr(self, f.name, value)
                self.explicit.add(f.name)


def _coerce(path, name, kind, raw):
    try:
        if kind is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return kind(raw)
    except ValueError:
        raise DataError(path, 0, f"config value for {name} is not a valid {kind.__name__}") from None


class _Parser(argparse.ArgumentParser):
    """Usage errors print help and exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- file helpers -------------------------------------------------------------

def _expand(inputs, suffixes) -> List[Path]:
    """Files as given; directories contribute their matching files, sorted."""
    out = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            out += sorted(f for f in p.iterdir() if f.suffix.lower() in suffixes)
        elif p.exists():
            out.append(p)
        else:
            raise DataError(p, 0, "no such file or directory")
    if not out:
        raise InvalidInputError("no input files found")
    return out


def _annotation_path(seq_path: Path) -> Path:
    return seq_path.with_suffix(".ann")


def _read_annotation_for(seq_path: Path, T: int):
    ann_path = _annotation_path(seq_path)
    if not ann_path.exists():
        raise DataError(ann_path, 0, f"missing annotation for {seq_path.name}")
    ann = formats.read_annotation(ann_path)
    if ann.T != T:
        raise DataError(ann_path, 0, f"annotation covers {ann.T} frames, sequence has {T}")
    return ann


def _pmap(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _pooled_frames(paths, max_frames, seed):
    X = np.concatenate([formats.read_sequence(p).frames for p in paths])
    if max_frames and X.shape[0] > max_frames:
        rng = np.random.default_rng(seed)
        X = X[np.sort(rng.choice(X.shape[0], max_frames, replace=False))]
    return X


def _emit(text: str, out: Optional[str]):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _out_dir(args) -> Path:
    if not args.out:
        raise InvalidInputError(f"{args.command} needs --out DIR")
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _require_out(args) -> str:
    if not args.out:
        raise InvalidInputError(f"{args.command} needs --out FILE")
    return args.out


def _rewrite_sequences(paths, out_dir, transform, threads):
    def one(p):
        seq = formats.read_sequence(p)
        target = out_dir / f"{p.stem}.gseq"
        formats.write_sequence(target, transform(seq.frames))
        ann = _annotation_path(p)
        if ann.exists():
            shutil.copyfile(ann, _annotation_path(target))

    _pmap(one, paths, threads)


# -- subcommands ----------------------------------------------------------------

def cmd_synth(args, cfg: PipelineConfig):
    spec = load_dataset_spec(Path(args.spec).read_text(encoding="utf-8")) if args.spec else demo_spec()
    if args.sequences is not None:
        spec.n_sequences = args.sequences
    if "seed" in cfg.explicit or not args.spec:
        spec.seed = cfg.seed
    ds = generate_dataset(spec)
    out = _out_dir(args)
    for seq, ann in zip(ds.sequences, ds.annotations):
        formats.write_sequence(out / f"{seq.name}.gseq", seq)
        formats.write_annotation(out / f"{seq.name}.ann", ann)
    log.info("wrote %d sequences to %s", len(ds.sequences), out)


def cmd_fit_gmm(args, cfg):
    X = _pooled_frames(_expand(args.inputs, SEQUENCE_SUFFIXES), cfg.max_frames, cfg.seed)
    gmm = fit_gmm(X, cfg.gmm_k, max_iters=cfg.gmm_max_iters, seed=cfg.seed)
    formats.write_gmm(_require_out(args), gmm)


def cmd_encode(args, cfg):
    gmm = formats.read_gmm(args.gmm)
    paths = _expand(args.inputs, SEQUENCE_SUFFIXES)
    _rewrite_sequences(paths, _out_dir(args), lambda X: sliding_window_encode(gmm, X, cfg.fv_window), cfg.threads)


def cmd_fit_pca(args, cfg):
    X = _pooled_frames(_expand(args.inputs, SEQUENCE_SUFFIXES), cfg.max_frames, cfg.seed)
    formats.write_pca(_require_out(args), fit_pca(X, cfg.pca_dim, whiten=cfg.pca_whiten))


def cmd_reduce(args, cfg):
    pca = formats.read_pca(args.pca)
    paths = _expand(args.inputs, SEQUENCE_SUFFIXES)
    _rewrite_sequences(paths, _out_dir(args), lambda X: clip_l2_per_dimension(project(pca, X)), cfg.threads)


def cmd_normality(args, cfg):
    X = np.concatenate([formats.read_sequence(p).frames for p in _expand(args.inputs, SEQUENCE_SUFFIXES)])
    alphas = [float(a) for a in args.alphas.split(",")] if args.alphas else list(DEFAULT_ALPHAS)
    rep = dimension_pass_report(X, alphas, min(cfg.samples_per_dim, X.shape[0]), cfg.seed)
    _emit(rep.to_csv(), args.out)


def _labelled_segments(paths) -> Dict[str, list]:
    by_label: Dict[str, list] = {}
    for p in paths:
        seq = formats.read_sequence(p)
        ann = _read_annotation_for(p, seq.T)
        for s in ann.spans:
            by_label.setdefault(s.label, []).append(seq.frames[s.start:s.end])
    return by_label


def cmd_train_hmm(args, cfg):
    by_label = _labelled_segments(_expand(args.inputs, SEQUENCE_SUFFIXES))
    lo = cfg.balance_min or 1
    hi = cfg.balance_max or max(len(v) for v in by_label.values())
    balanced = balance_classes(by_label, max(1, min(lo, hi)), hi, seed=cfg.seed)

    def train(label):
        segs = [s.frames for s in balanced[label]]
        hmm = init_hmm(label, segs, cfg.hmm_divisor, cfg.hmm_mixtures, seed=cfg.seed)
        res = baum_welch(hmm, segs, max_iters=cfg.hmm_iters)
        log.info("%s: S=%d, %d samples, %d iterations", label, hmm.S, len(segs), res.n_iter)
        return res.hmm

    labels = sorted(balanced)
    hmms = dict(zip(labels, _pmap(train, labels, cfg.threads)))
    formats.write_hmm_dir(_out_dir(args), hmms)


def cmd_build_grammar(args, cfg):
    paths = _expand(args.inputs, (".ann",) + SEQUENCE_SUFFIXES)
    annotations = []
    for p in paths:
        ann_path = p if p.suffix == ".ann" else _annotation_path(p)
        annotations.append(formats.read_annotation(ann_path).labels)
    if cfg.grammar_variant == "path":
        model = build_path_grammar(annotations)
    else:
        model = build_bigram(annotations, cfg.bigram_smoothing)
    formats.write_grammar(_require_out(args), model)


def _load_models(hmm_dir, grammar_path):
    hmms = formats.read_hmm_dir(hmm_dir)
    model = formats.read_grammar(grammar_path)
    missing = [l for l in model.vocabulary if l not in hmms]
    if missing:
        raise DataError(grammar_path, 0, f"no HMM in {hmm_dir} for unit(s) {', '.join(missing)}")
    return hmms, model


def cmd_decode(args, cfg):
    hmms, model = _load_models(args.hmms, args.grammar)
    paths = _expand(args.inputs, SEQUENCE_SUFFIXES)
    out = _out_dir(args)
    beam = cfg.beam or None

    def one(p):
        X = formats.read_sequence(p).frames
        try:
            seg = decode(X, hmms, model, cfg.insertion_penalty, beam)
        except NoPathError as exc:
            return f"{p}: {exc}"
        formats.write_segmentation(out / f"{p.stem}.seg", seg)
        return None

    failures = [f for f in _pmap(one, paths, cfg.threads) if f]
    if failures:
        raise NoPathError("; ".join(failures))


def cmd_classify(args, cfg):
    if not args.activity:
        raise InvalidInputError("classify needs at least one --activity NAME HMM_DIR GRAMMAR")
    bundles = {name: _load_models(hmm_dir, grammar) for name, hmm_dir, grammar in args.activity}
    names = sorted(bundles)
    paths = _expand(args.inputs, SEQUENCE_SUFFIXES)
    beam = cfg.beam or None

    def one(p):
        X = formats.read_sequence(p).frames
        return classify_activity(X, bundles, cfg.insertion_penalty, beam)

    results = _pmap(one, paths, cfg.threads)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sequence", "label"] + [f"score_{n}" for n in names])
    for p, r in zip(paths, results):
        w.writerow([p.stem, r.label] + [formats.fmt(r.scores[n]) for n in names])
    _emit(buf.getvalue(), args.out)


def _read_activity_labels(path) -> Dict[str, str]:
    out = {}
    for offset, line in formats._lines(path):
        if not line.strip() or line.startswith("sequence,"):
            continue
        parts = line.split(",")
        if len(parts) < 2:
            raise DataError(path, offset, "expected 'sequence,label'")
        out[parts[0]] = parts[1]
    return out


def cmd_evaluate(args, cfg):
    rows = []
    exclude = tuple(args.exclude or ())
    if args.pred:
        pred_paths = _expand(args.pred, (".seg",))
        gt_dir = Path(args.gt) if args.gt else None
        cm = None
        fa_num = 0.0
        fa_den = 0
        mid = []
        for p in pred_paths:
            pred = formats.read_segmentation(p)
            gt_path = (gt_dir / f"{p.stem}.ann") if gt_dir else p.with_suffix(".ann")
            gt = formats.read_annotation(gt_path)
            if gt.T != pred.T:
                raise DataError(gt_path, 0, f"covers {gt.T} frames, prediction {p.name} has {pred.T}")
            c = confusion_matrix(gt, pred, exclude=exclude)
            cm = c if cm is None else cm + c
            fa_num += np.trace(c.counts)
            fa_den += c.total
            mid.append(midpoint_hit_accuracy(gt, pred))
            if args.per_sequence:
                rows.append(("frame_accuracy", p.stem, frame_accuracy(gt, pred, exclude)))
        if fa_den == 0:
            raise InvalidInputError("no frames left to evaluate")
        rows += [
            ("frame_accuracy", "all", fa_num / fa_den),
            ("class_mean_accuracy", "all", class_mean_accuracy(cm)),
            ("midpoint_hit_accuracy", "all", float(np.mean(mid))),
        ]
        if args.confusion:
            Path(args.confusion).write_text(cm.to_csv(), encoding="utf-8")
    if args.activity_pred or args.activity_gt:
        if not (args.activity_pred and args.activity_gt):
            raise InvalidInputError("--activity-pred and --activity-gt go together")
        pred = _read_activity_labels(args.activity_pred)
        gt = _read_activity_labels(args.activity_gt)
        keys = sorted(gt)
        missing = [k for k in keys if k not in pred]
        if missing:
            raise DataError(args.activity_pred, 0, f"no prediction for {missing[0]}")
        rows.append(("activity_accuracy", "all", activity_accuracy([gt[k] for k in keys], [pred[k] for k in keys])))
    if not rows:
        raise InvalidInputError("evaluate needs --pred and/or --activity-pred/--activity-gt")
    _emit(metrics_csv(rows), args.out)


COMMANDS = {
    "synth": cmd_synth,
    "fit-gmm": cmd_fit_gmm,
    "encode": cmd_encode,
    "fit-pca": cmd_fit_pca,
    "reduce": cmd_reduce,
    "normality": cmd_normality,
    "train-hmm": cmd_train_hmm,
    "build-grammar": cmd_build_grammar,
    "decode": cmd_decode,
    "classify": cmd_classify,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    # SUPPRESS lets the flags appear before or after the subcommand
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for all randomness")
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads (output does not depend on it)")
    g.add_argument("--config", default=argparse.SUPPRESS, help="INI file overriding built-in defaults")
    g.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory (default: stdout for reports)")
    g.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = _Parser(prog="genseg", description=__doc__.splitlines()[0], parents=[common])
    parser.set_defaults(seed=None, threads=None, config=None, out=None, verbose=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser, metavar="COMMAND")

    def add(name, help_text):
        return sub.add_parser(name, help=help_text, description=help_text, parents=[common])

    p = add("synth", "generate labelled synthetic sequences")
    p.add_argument("--spec", help="dataset spec (INI); default is the built-in five-unit demo")
    p.add_argument("--sequences", type=int, help="override the number of sequences")

    p = add("fit-gmm", "fit the diagonal GMM codebook on pooled frames")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-k", "--k", dest="gmm_k", type=int)
    p.add_argument("--max-iters", dest="gmm_max_iters", type=int)
    p.add_argument("--max-frames", dest="max_frames", type=int, help="random frame subsample size")

    p = add("encode", "per-frame sliding-window Fisher vectors")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--gmm", required=True)
    p.add_argument("--window", dest="fv_window", type=int)

    p = add("fit-pca", "fit the PCA reduction on pooled frames")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--dim", dest="pca_dim", type=int)
    p.add_argument("--no-whiten", dest="pca_whiten", action="store_false", default=None)
    p.add_argument("--max-frames", dest="max_frames", type=int)

    p = add("reduce", "project sequences and L2-normalise each dimension per clip")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--pca", required=True)

    p = add("normality", "per-dimension Lilliefors / Jarque-Bera pass rates (CSV)")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--alphas", help="comma-separated significance levels")
    p.add_argument("--samples-per-dim", dest="samples_per_dim", type=int)

    p = add("train-hmm", "balance unit samples, initialise and re-estimate unit HMMs")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--divisor", dest="hmm_divisor", type=float, help="mean frames per state")
    p.add_argument("--mixtures", dest="hmm_mixtures", type=int)
    p.add_argument("--iters", dest="hmm_iters", type=int)
    p.add_argument("--min-samples", dest="balance_min", type=int)
    p.add_argument("--max-samples", dest="balance_max", type=int)

    p = add("build-grammar", "path grammar or bigram model from annotations")
    p.add_argument("inputs", nargs="+", help=".ann files, sequences, or directories")
    p.add_argument("--variant", dest="grammar_variant", choices=["path", "bigram"])
    p.add_argument("--smoothing", dest="bigram_smoothing", type=float)

    p = add("decode", "grammar-constrained Viterbi segmentation")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--hmms", required=True, help="directory of <label>.hmm files")
    p.add_argument("--grammar", required=True)
    p.add_argument("--penalty", dest="insertion_penalty", type=float)
    p.add_argument("--beam", dest="beam", type=float, help="beam width (0 = exact)")

    p = add("classify", "pick the activity whose grammar decodes best (CSV)")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--activity", nargs=3, action="append", metavar=("NAME", "HMM_DIR", "GRAMMAR"))
    p.add_argument("--penalty", dest="insertion_penalty", type=float)
    p.add_argument("--beam", dest="beam", type=float)

    p = add("evaluate", "segmentation and activity metrics (CSV)")
    p.add_argument("--pred", nargs="+", help=".seg files or directories")
    p.add_argument("--gt", help="directory of ground-truth .ann files (default: next to predictions)")
    p.add_argument("--exclude", action="append", help="ground-truth label to ignore (repeatable)")
    p.add_argument("--per-sequence", action="store_true")
    p.add_argument("--confusion", help="also write the frame confusion matrix here")
    p.add_argument("--activity-pred", help="classify output CSV")
    p.add_argument("--activity-gt", help="CSV of sequence,label")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="genseg: %(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = PipelineConfig()
        if args.config:
            cfg.update_from_ini(args.config)
        cfg.override(args)
        cfg.validate()
        COMMANDS[args.command](args, cfg)
    except NoPathError as exc:
        print(f"genseg: no path: {exc}", file=sys.stderr)
        return EXIT_NO_PATH
    except (GensegError, OSError) as exc:
        print(f"genseg: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
