import struct

import numpy as np
import pytest

from genseg import formats
from genseg.errors import DataError
from genseg.gmm import DiagonalGmm
from genseg.grammar import build_bigram, build_path_grammar
from genseg.pca import fit_pca
from genseg.sequences import Segmentation, Span

from oracles import random_hmm


class TestSequence:
    def test_round_trip(self, tmp_path):
        frames = np.random.default_rng(0).normal(size=(7, 3)).astype(np.float32).astype(float)
        formats.write_sequence(tmp_path / "a.gseq", frames)
        seq = formats.read_sequence(tmp_path / "a.gseq")
        np.testing.assert_array_equal(seq.frames, frames)
        assert seq.name == "a"

    def test_layout(self, tmp_path):
        formats.write_sequence(tmp_path / "a.gseq", np.array([[1.0, 2.0]]))
        raw = (tmp_path / "a.gseq").read_bytes()
        assert raw == b"GSEQ1" + struct.pack("<II", 1, 2) + struct.pack("<ff", 1.0, 2.0)

    def test_csv(self, tmp_path):
        (tmp_path / "a.csv").write_text("1,2\n3,4.5\n")
        np.testing.assert_array_equal(formats.read_sequence(tmp_path / "a.csv").frames, [[1, 2], [3, 4.5]])

    @pytest.mark.parametrize("raw,offset", [
        (b"XSEQ1", 0),
        (b"GSEQ1\x01\x00", 7),
        (b"GSEQ1" + struct.pack("<II", 2, 2) + b"\x00" * 12, 25),
    ])
    def test_malformed(self, tmp_path, raw, offset):
        path = tmp_path / "bad.gseq"
        path.write_bytes(raw)
        with pytest.raises(DataError) as err:
            formats.read_sequence(path)
        assert err.value.offset == offset
        assert str(path) in str(err.value)

    def test_non_finite(self, tmp_path):
        path = tmp_path / "nan.gseq"
        formats.write_sequence(path, np.array([[1.0, np.nan]]))
        with pytest.raises(DataError) as err:
            formats.read_sequence(path)
        assert err.value.offset == 13 + 4

    def test_csv_ragged(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("1,2\n3\n")
        with pytest.raises(DataError) as err:
            formats.read_sequence(path)
        assert err.value.offset == 4


class TestModels:
    def test_gmm_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        w = rng.uniform(size=3)
        g = DiagonalGmm(w / w.sum(), rng.normal(size=(3, 2)), rng.uniform(0.1, 2, size=(3, 2)))
        formats.write_gmm(tmp_path / "g.txt", g)
        assert formats.read_gmm(tmp_path / "g.txt") == g

    def test_pca_round_trip(self, tmp_path):
        X = np.random.default_rng(2).normal(size=(40, 5))
        p = fit_pca(X, 3)
        formats.write_pca(tmp_path / "p.txt", p)
        assert formats.read_pca(tmp_path / "p.txt") == p

    def test_hmm_dir_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        hmms = {l: random_hmm(rng, l, int(rng.integers(1, 4)), 2) for l in ("reach", "pour")}
        formats.write_hmm_dir(tmp_path / "hmms", hmms)
        assert sorted(p.name for p in (tmp_path / "hmms").iterdir()) == ["pour.hmm", "reach.hmm"]
        back = formats.read_hmm_dir(tmp_path / "hmms")
        assert back == hmms

    @pytest.mark.parametrize("model", [
        build_path_grammar([["A", "B"], ["C"]]),
        build_bigram([["A", "B"], ["B"]], smoothing_k=0.0),
        build_bigram([["A", "B"], ["B"]], smoothing_k=0.01),
    ])
    def test_grammar_round_trip(self, tmp_path, model):
        formats.write_grammar(tmp_path / "m.txt", model)
        assert formats.read_grammar(tmp_path / "m.txt") == model

    def test_truncated_gmm(self, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text("genseg-gmm v1 K=2 D=1\n0.5 0.5\n0\n")
        with pytest.raises(DataError) as err:
            formats.read_gmm(path)
        assert "unexpected end of file" in str(err.value)

    def test_bad_number_offset(self, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text("genseg-gmm v1 K=1 D=1\n1\nzero\n1\n")
        with pytest.raises(DataError) as err:
            formats.read_gmm(path)
        assert err.value.offset == len("genseg-gmm v1 K=1 D=1\n1\n")

    def test_invalid_gmm_values(self, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text("genseg-gmm v1 K=1 D=1\n1\n0\n-1\n")
        with pytest.raises(DataError):
            formats.read_gmm(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "h.hmm"
        path.write_text("genseg-hmm v2 label=a S=1 D=1\n")
        with pytest.raises(DataError) as err:
            formats.read_hmm(path)
        assert err.value.offset == 0


class TestSegmentations:
    def test_annotation_round_trip(self, tmp_path):
        seg = Segmentation.from_labels(["A", "B"], [0, 4], 9)
        formats.write_annotation(tmp_path / "a.ann", seg)
        assert (tmp_path / "a.ann").read_text() == "A 0 4\nB 4 9\n"
        assert formats.read_annotation(tmp_path / "a.ann").spans == seg.spans

    def test_segmentation_round_trip(self, tmp_path):
        seg = Segmentation([Span("A", 0, 3, -1.25), Span("B", 3, 5, -0.1)], 5, -7.5)
        formats.write_segmentation(tmp_path / "s.seg", seg)
        text = (tmp_path / "s.seg").read_text()
        assert text.splitlines()[0] == "genseg-seg v1 T=5 total=-7.5"
        assert text.splitlines()[1] == "A 0 3 -1.25"
        back = formats.read_segmentation(tmp_path / "s.seg")
        assert back.spans == seg.spans and back.total == seg.total

    def test_segmentation_accepts_annotation(self, tmp_path):
        (tmp_path / "a.ann").write_text("A 0 2\n")
        assert formats.read_segmentation(tmp_path / "a.ann").labels == ["A"]

    def test_gap(self, tmp_path):
        path = tmp_path / "a.ann"
        path.write_text("A 0 2\nB 3 5\n")
        with pytest.raises(DataError) as err:
            formats.read_annotation(path)
        assert err.value.offset == 6
        assert "byte 6" in str(err.value)

    def test_length_disagrees_with_header(self, tmp_path):
        path = tmp_path / "s.seg"
        path.write_text("genseg-seg v1 T=9 total=0\nA 0 3 0\n")
        with pytest.raises(DataError):
            formats.read_segmentation(path)
