import numpy as np
import pytest

from genseg.errors import InvalidInputError
from genseg.grammar import build_bigram, build_path_grammar
from genseg.training import (
    DatasetSpec,
    LabeledSegment,
    UnitSpec,
    balance_classes,
    demo_spec,
    dump_dataset_spec,
    generate_dataset,
    load_dataset_spec,
    rescale_time,
    separated_means,
    smote_pair,
)


def segments(rng, n, lo=5, hi=15, D=2):
    return [rng.normal(size=(int(rng.integers(lo, hi)), D)) for _ in range(n)]


class TestBalance:
    def test_subsample_large_class(self):
        rng = np.random.default_rng(0)
        out = balance_classes({"A": segments(rng, 100)}, min_n=12, max_n=40)
        assert len(out["A"]) == 40
        assert all(s.source == "real" for s in out["A"])

    def test_oversample_small_class(self):
        rng = np.random.default_rng(1)
        out = balance_classes({"A": segments(rng, 3)}, min_n=12, max_n=30)
        assert len(out["A"]) == 12
        assert sum(s.source == "synthetic" for s in out["A"]) == 9
        assert all(s.source == "real" for s in out["A"][:3])

    @pytest.mark.parametrize("n", [1, 2, 7, 12, 20, 31, 90])
    def test_counts_in_range(self, n):
        rng = np.random.default_rng(n)
        out = balance_classes({"A": segments(rng, n), "B": segments(rng, 15)}, min_n=12, max_n=30)
        for segs in out.values():
            assert 12 <= len(segs) <= 30

    def test_synthetic_frames_within_parent_hull(self):
        rng = np.random.default_rng(2)
        segs = segments(rng, 4, D=1)
        out = balance_classes({"A": segs}, min_n=20, max_n=30, seed=3)
        lo = min(s.min() for s in segs)
        hi = max(s.max() for s in segs)
        for s in out["A"]:
            assert lo - 1e-12 <= s.frames.min() and s.frames.max() <= hi + 1e-12

    def test_deterministic_and_independent_of_other_classes(self):
        rng = np.random.default_rng(4)
        a = segments(rng, 3)
        b = segments(rng, 5)
        one = balance_classes({"A": a}, 10, 20, seed=5)["A"]
        two = balance_classes({"A": a, "B": b}, 10, 20, seed=5)["A"]
        assert all(np.array_equal(x.frames, y.frames) for x, y in zip(one, two))

    def test_invalid_range(self):
        with pytest.raises(InvalidInputError):
            balance_classes({"A": [np.zeros((3, 1))]}, min_n=5, max_n=4)

    def test_empty_class(self):
        with pytest.raises(InvalidInputError):
            balance_classes({"A": []}, 1, 2)


class TestSmote:
    def test_lambda_zero_is_first_parent(self):
        rng = np.random.default_rng(6)
        a, b = rng.normal(size=(6, 2)), rng.normal(size=(9, 2))
        np.testing.assert_array_equal(smote_pair(a, b, 0.0), rescale_time(a, 9))

    def test_lambda_one_is_second_parent(self):
        rng = np.random.default_rng(7)
        a, b = rng.normal(size=(9, 2)), rng.normal(size=(4, 2))
        np.testing.assert_array_equal(smote_pair(a, b, 1.0), rescale_time(b, 9))

    def test_rescale(self):
        x = np.arange(4.0)[:, None]
        assert rescale_time(x, 8).ravel().tolist() == [0, 0, 1, 1, 2, 2, 3, 3]
        assert rescale_time(x, 2).ravel().tolist() == [1, 3]
        np.testing.assert_array_equal(rescale_time(x, 4), x)

    def test_bad_segment(self):
        with pytest.raises(InvalidInputError):
            LabeledSegment("A", np.zeros((0, 2)))


def one_unit_spec(duration=(10, 10), n=1, seed=0):
    units = {"A": UnitSpec([[0.0, 1.0], [5.0, -2.0]], [[1.0, 1.0], [0.25, 4.0]], duration)}
    return DatasetSpec(units, build_path_grammar([["A"]]), n, seed)


class TestGenerator:
    def test_fixed_duration(self):
        ds = generate_dataset(one_unit_spec())
        assert ds.sequences[0].T == 10
        assert [(s.label, s.start, s.end) for s in ds.annotations[0].spans] == [("A", 0, 10)]

    def test_deterministic(self):
        a = generate_dataset(demo_spec(5, seed=3))
        b = generate_dataset(demo_spec(5, seed=3))
        for x, y in zip(a.sequences, b.sequences):
            assert x.frames.tobytes() == y.frames.tobytes()
        assert [s.spans for s in a.annotations] == [s.spans for s in b.annotations]

    def test_state_means(self):
        spec = one_unit_spec(duration=(4, 12), n=1000, seed=1)
        ds = generate_dataset(spec)
        X = np.concatenate([s.frames for s in ds.sequences])
        states = np.concatenate(ds.state_paths)
        for j in range(2):
            np.testing.assert_allclose(X[states == j].mean(axis=0), spec.units["A"].means[j], atol=0.1)

    def test_labels_follow_grammar(self):
        spec = demo_spec(30, seed=4)
        for ann in generate_dataset(spec).annotations:
            assert spec.model.accepts(ann.labels)

    def test_bigram_sampling(self):
        units = {l: UnitSpec([[float(i)]], [[1.0]], (2, 4)) for i, l in enumerate("AB")}
        spec = DatasetSpec(units, build_bigram([["A", "B"], ["A", "A", "B"]], smoothing_k=0.0), 20, 0)
        for ann in generate_dataset(spec).annotations:
            assert ann.labels[0] == "A" and ann.labels[-1] == "B"

    def test_separated_means(self):
        m = separated_means(15, 6, 4.0, seed=0)
        d = np.linalg.norm(m[:, None] - m[None], axis=-1)
        assert np.all(d[~np.eye(15, dtype=bool)] >= 4.0)

    def test_invalid_spec(self):
        spec = one_unit_spec(duration=(1, 3))
        with pytest.raises(InvalidInputError, match="below state count"):
            generate_dataset(spec)


SPEC_TEXT = """\
[dataset]
sequences = 4
seed = 7
model = path
paths = A B | B

[unit A]
duration = 3 6
means = 0 0; 4 0
variances = 1 1; 1 1

[unit B]
duration = 2
means = 0 5
variances = 0.5 0.5
"""


class TestSpecFile:
    def test_parse(self):
        spec = load_dataset_spec(SPEC_TEXT)
        assert spec.n_sequences == 4 and spec.seed == 7
        assert spec.model.sequences == [("A", "B"), ("B",)]
        assert spec.units["A"].S == 2
        assert spec.units["B"].duration == (2, 2)

    def test_round_trip(self):
        spec = load_dataset_spec(SPEC_TEXT)
        again = load_dataset_spec(dump_dataset_spec(spec))
        assert again.model == spec.model
        for label in spec.units:
            np.testing.assert_array_equal(again.units[label].means, spec.units[label].means)
            assert again.units[label].duration == spec.units[label].duration

    def test_demo_round_trip(self):
        spec = demo_spec(3, seed=2)
        again = load_dataset_spec(dump_dataset_spec(spec))
        a, b = generate_dataset(spec), generate_dataset(again)
        assert all(np.array_equal(x.frames, y.frames) for x, y in zip(a.sequences, b.sequences))

    @pytest.mark.parametrize("text,match", [
        ("[unit A]\nmeans = 0\nvariances = 1\nduration = 2\n", "missing"),
        ("[dataset]\npaths = A\n", "undefined unit"),
        (SPEC_TEXT.replace("model = path", "model = trigram"), "unknown model"),
        (SPEC_TEXT.replace("variances = 0.5 0.5", "variances = 0.5"), "shape"),
        ("not an ini file", "invalid"),
    ])
    def test_errors(self, text, match):
        with pytest.raises(InvalidInputError, match=match):
            load_dataset_spec(text)
