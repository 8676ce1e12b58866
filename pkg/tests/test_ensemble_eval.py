import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recam.corpus import DatasetSplit, Instance
from recam.encoder import ScoringHead, reference_encoder_for
from recam.ensemble_eval import (
    EvaluationError,
    accuracy,
    ensemble,
    error_report,
    format_error_case,
    length_buckets,
    transfer_eval,
)
from recam.predictions import (
    PredictionError,
    PredictionRecord,
    Predictions,
    argmax,
    dumps_predictions,
    read_predictions,
    write_predictions,
)
from recam.synthetic import separable_split
from recam.tokenization import WhitespaceTokenizer

from conftest import whitespace_for


def preds(*vectors, ids=None):
    ids = ids or [f"i{k}" for k in range(len(vectors))]
    return Predictions([PredictionRecord(i, v, argmax(v)) for i, v in zip(ids, vectors)])


def split_of(golds, passages=None, name="dev"):
    passages = passages or ["p"] * len(golds)
    return DatasetSplit(
        name, [Instance(f"i{k}", passages[k], "@placeholder", ("a", "b", "c"), g) for k, g in enumerate(golds)]
    )


class TestEnsemble:
    def test_identity(self):
        p = preds((0.3, 0.7), (0.9, 0.1))
        assert ensemble([p]).records == p.records

    def test_mean(self):
        (rec,) = ensemble([preds((0.6, 0.4)), preds((0.2, 0.8))]).records
        assert rec.probs == pytest.approx((0.4, 0.6), abs=1e-15) and rec.choice == 1

    def test_tie_to_lowest(self):
        (rec,) = ensemble([preds((0.5, 0.5)), preds((0.5, 0.5))]).records
        assert rec.choice == 0

    def test_id_mismatch(self):
        with pytest.raises(EvaluationError, match="id set"):
            ensemble([preds((1.0, 0.0)), preds((1.0, 0.0), ids=["other"])])

    def test_width_mismatch(self):
        with pytest.raises(EvaluationError, match="candidate count"):
            ensemble([preds((1.0, 0.0)), preds((0.2, 0.3, 0.5))])

    def test_empty(self):
        with pytest.raises(EvaluationError):
            ensemble([])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 5), st.integers(1, 4), st.integers(0, 10**6))
    def test_permutation_equivariance(self, width, members, seed):
        rng = np.random.default_rng(seed)
        vecs = [rng.dirichlet(np.ones(width)) for _ in range(members)]
        perm = rng.permutation(width)
        plain = ensemble([preds(tuple(v)) for v in vecs]).records[0].probs
        permuted = ensemble([preds(tuple(v[perm])) for v in vecs]).records[0].probs
        assert np.allclose(np.asarray(plain)[perm], permuted, atol=1e-15)


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy(preds((0.1, 0.9, 0.0), (1.0, 0.0, 0.0)), split_of([1, 0])) == 1.0

    def test_six_of_eight(self):
        golds = [0, 1, 2, 0, 1, 2, 0, 1]
        choices = [0, 1, 2, 0, 1, 2, 1, 0]
        vecs = [tuple(float(j == c) for j in range(3)) for c in choices]
        assert accuracy(preds(*vecs), split_of(golds)) == 0.75

    def test_empty(self):
        with pytest.raises(EvaluationError):
            accuracy(Predictions([]), DatasetSplit("dev", []))

    def test_missing_label(self):
        split = DatasetSplit("dev", [Instance("i0", "p", "@placeholder", ("a", "b"))])
        with pytest.raises(EvaluationError, match="no gold"):
            accuracy(preds((1.0, 0.0)), split)

    def test_id_mismatch(self):
        with pytest.raises(EvaluationError, match="do not match"):
            accuracy(preds((1.0, 0.0, 0.0), ids=["zz"]), split_of([0]))


class TestBuckets:
    TOK = WhitespaceTokenizer.from_texts(["w"])

    def test_manual_assignment(self):
        passages = [" ".join(["w"] * n) for n in (100, 300, 500)]
        split = split_of([0, 0, 0], passages)
        report = length_buckets(preds(*[(1.0, 0.0, 0.0)] * 3), split, self.TOK, [256, 448])
        assert [b.count for b in report.buckets] == [1, 1, 1]
        assert report.table().splitlines()[1].startswith("[0, 256)")

    def test_half_open(self):
        passages = [" ".join(["w"] * n) for n in (255, 256)]
        report = length_buckets(preds(*[(1.0, 0.0, 0.0)] * 2), split_of([0, 1], passages), self.TOK, [256])
        assert [(b.count, b.accuracy) for b in report.buckets] == [(1, 1.0), (1, 0.0)]

    def test_single_bucket(self):
        p = preds((1.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0))
        s = split_of([0, 1, 1])
        report = length_buckets(p, s, self.TOK, [])
        assert report.buckets[0].accuracy == accuracy(p, s)

    def test_empty_bucket_flagged(self):
        report = length_buckets(preds((1.0, 0.0, 0.0)), split_of([0]), self.TOK)
        assert report.buckets[-1].count == 0 and report.buckets[-1].accuracy is None
        assert "n/a" in report.table()
        assert report.to_dict()["buckets"][-1]["accuracy"] is None
        assert report.csv().splitlines()[0] == "bucket,count,accuracy"

    @pytest.mark.parametrize("edges", [[300, 200], [5, 5]])
    def test_bad_edges(self, edges):
        with pytest.raises(EvaluationError):
            length_buckets(preds((1.0, 0.0, 0.0)), split_of([0]), self.TOK, edges)


class TestErrors:
    def test_all_correct(self):
        assert error_report(preds((0.9, 0.1, 0.0)), split_of([0])) == []

    def test_sorted_by_confidence(self):
        p = preds((0.1, 0.6, 0.3), (0.05, 0.9, 0.05), (1.0, 0.0, 0.0))
        cases = error_report(p, split_of([0, 0, 0]))
        assert [c.id for c in cases] == ["i1", "i0"]
        assert [c.confidence for c in cases] == [0.9, 0.6]

    def test_fields_and_nal_token(self):
        inst = Instance("i0", "long " * 100, "@placeholder q", ("a", "b", "c", "z"), 2, 1, {"token": "z"})
        (case,) = error_report(preds((0.2, 0.7, 0.1)), DatasetSplit("dev", [inst]), excerpt_chars=20)
        assert case.candidates == ["a", "b", "c"] and case.gold == 2 and case.chosen == 1
        assert case.nal_token == "z" and case.passage_excerpt.endswith("...")
        text = format_error_case(case)
        assert "Negative augmented choice: (D) z" in text
        assert "Right option: (C) c" in text and "Wrong option: (B) b" in text

    def test_external_augmentation_map(self):
        (case,) = error_report(preds((0.2, 0.7, 0.1)), split_of([0]), {"i0": {"token": "all"}})
        assert case.nal_token == "all"


class TestPredictionFiles:
    def test_round_trip(self, tmp_path):
        p = preds((0.25, 0.75), (0.5, 0.5))
        write_predictions(p, tmp_path / "p.jsonl")
        again = read_predictions(tmp_path / "p.jsonl")
        assert again.records == p.records and again.model_id == "p"
        assert dumps_predictions(again) == (tmp_path / "p.jsonl").read_text()

    def test_bad_sum(self):
        with pytest.raises(PredictionError, match="sum"):
            PredictionRecord("x", (0.5, 0.6), 0)

    def test_duplicate_ids(self):
        with pytest.raises(PredictionError, match="unique"):
            preds((1.0,), (1.0,), ids=["a", "a"])

    def test_malformed_line(self, tmp_path):
        (tmp_path / "p.jsonl").write_text('{"id": "a", "probs": [1.0], "choice": 0}\n{"id": "b"}\n')
        with pytest.raises(PredictionError, match=":2:"):
            read_predictions(tmp_path / "p.jsonl")


def test_transfer_identical_distribution():
    a = separable_split(30, seed=1, name="dev")
    b = DatasetSplit("dev", list(a.instances), task_tag="subtask2")
    tok = whitespace_for(a)
    enc = reference_encoder_for(tok, dim=16, heads=2, ffn_dim=32, max_positions=64)
    head = ScoringHead(16)
    from recam.mcscorer import predict

    in_domain = accuracy(predict(a, enc, head, tok, 64), a)
    report = transfer_eval(enc, head, tok, b, source_task="subtask1", max_len=64)
    assert report.accuracy == in_domain
    assert (report.source_task, report.target_task, report.count) == ("subtask1", "subtask2", 30)


def test_transfer_unlabeled():
    s = DatasetSplit("dev", [Instance("i", "p", "@placeholder", ("a", "b"))])
    tok = whitespace_for(s)
    with pytest.raises(EvaluationError, match="labeled"):
        transfer_eval(reference_encoder_for(tok), ScoringHead(64), tok, s, "subtask1")
