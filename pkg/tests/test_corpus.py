import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recam.corpus import (
    CorpusError,
    DatasetSplit,
    Instance,
    dumps_split,
    ingest,
    infer_split_name,
    load_jsonl,
    split_stats,
    validate_instance,
    write_jsonl,
)
from recam.tokenization import WhitespaceTokenizer

from conftest import TABLE1_OPTIONS, TABLE1_PASSAGE, TABLE1_QUESTION


def record(**kw):
    base = {
        "article": TABLE1_PASSAGE,
        "question": TABLE1_QUESTION,
        **{f"option_{k}": w for k, w in enumerate(TABLE1_OPTIONS)},
        "label": 3,
    }
    base.update(kw)
    return base


def write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


class TestLoad:
    def test_table1_record(self, tmp_path):
        split = load_jsonl(write_lines(tmp_path / "train.jsonl", [record()]), "subtask1")
        (inst,) = split.instances
        assert inst.gold_index == 3
        assert inst.gold == "wants"
        assert inst.candidates == TABLE1_OPTIONS
        assert split.name == "train" and split.task_tag == "subtask1"

    def test_empty_file(self, tmp_path):
        p = tmp_path / "dev.jsonl"
        p.write_text("")
        assert len(load_jsonl(p)) == 0

    def test_missing_option_names_line_and_field(self, tmp_path):
        bad = record()
        del bad["option_2"]
        p = write_lines(tmp_path / "train.jsonl", [record(), bad])
        with pytest.raises(CorpusError, match=r"train\.jsonl:2: missing field option_2"):
            load_jsonl(p)

    def test_missing_article(self, tmp_path):
        bad = record()
        del bad["article"]
        with pytest.raises(CorpusError, match="missing field article"):
            load_jsonl(write_lines(tmp_path / "train.jsonl", [bad]))

    def test_malformed_json_line(self, tmp_path):
        p = tmp_path / "train.jsonl"
        p.write_text(json.dumps(record()) + "\n{not json\n")
        with pytest.raises(CorpusError, match=":2: malformed JSON"):
            load_jsonl(p)

    def test_duplicate_id(self, tmp_path):
        p = write_lines(tmp_path / "train.jsonl", [record(id="a"), record(id="a")])
        with pytest.raises(CorpusError, match="duplicate id"):
            load_jsonl(p)

    def test_unreadable(self, tmp_path):
        with pytest.raises(CorpusError, match="cannot read"):
            load_jsonl(tmp_path / "nope_train.jsonl")

    def test_order_preserved_and_default_ids(self, tmp_path):
        recs = [record(question=f"q{k} @placeholder") for k in range(4)]
        split = load_jsonl(write_lines(tmp_path / "test.jsonl", recs))
        assert [i.question for i in split] == [r["question"] for r in recs]
        assert [i.id for i in split] == ["0", "1", "2", "3"]

    def test_unlabeled_record(self, tmp_path):
        r = record()
        del r["label"]
        (inst,) = load_jsonl(write_lines(tmp_path / "test.jsonl", [r])).instances
        assert inst.gold_index is None

    def test_variable_option_count(self, tmp_path):
        r = {"article": "p", "question": "@placeholder x", "option_0": "a", "option_1": "b", "label": 1}
        (inst,) = load_jsonl(write_lines(tmp_path / "dev.jsonl", [r])).instances
        assert inst.candidates == ("a", "b")

    def test_invalid_instances_rejected_with_report(self, tmp_path):
        recs = [record(), record(question="no marker"), record(label=9), record(option_1="")]
        split, report = ingest(write_lines(tmp_path / "train.jsonl", recs))
        assert len(split) == 1
        assert (report.total, report.accepted, report.rejected) == (4, 1, 3)
        assert report.accepted + report.rejected == report.total
        issues = [i for lst in report.issues.values() for i in lst]
        assert "missing placeholder" in issues
        assert any("out of range" in i for i in issues)
        assert any("empty candidate" in i for i in issues)

    def test_split_name_inference(self):
        assert infer_split_name("Task_1_train.jsonl") == "train"
        assert infer_split_name("data/Task_2_dev.jsonl") == "dev"
        assert infer_split_name("trial.jsonl") == "trial"
        with pytest.raises(CorpusError):
            infer_split_name("data.jsonl")

    def test_augmented_record(self, tmp_path):
        r = record(option_5="all", nal_meta={"token": "all", "probability": 0.5, "rank": 1, "skipped": False})
        (inst,) = load_jsonl(write_lines(tmp_path / "train.jsonl", [r])).instances
        assert inst.n_augmented == 1 and inst.original_count == 5
        assert inst.original().candidates == TABLE1_OPTIONS


class TestValidate:
    def test_table1_valid(self, table1_instance):
        assert validate_instance(table1_instance) == []

    def test_missing_placeholder(self):
        assert validate_instance(Instance("x", "p", "no marker here", ("a", "b"))) == ["missing placeholder"]

    def test_multiple_placeholders(self):
        issues = validate_instance(Instance("x", "p", "a @placeholder b @placeholder c", ("a", "b")))
        assert issues == ["multiple placeholders"]

    def test_too_few_candidates(self):
        assert any("candidate count" in i for i in validate_instance(Instance("x", "p", "@placeholder", ("a",))))

    def test_gold_out_of_range(self):
        assert validate_instance(Instance("x", "p", "@placeholder", ("a", "b"), 2))

    def test_marker_is_case_sensitive(self):
        assert validate_instance(Instance("x", "p", "@Placeholder", ("a", "b"))) == ["missing placeholder"]


class TestSplit:
    def test_duplicate_ids_rejected(self):
        inst = Instance("a", "p", "@placeholder", ("x", "y"))
        with pytest.raises(CorpusError):
            DatasetSplit("train", [inst, inst])

    def test_bad_name(self):
        with pytest.raises(CorpusError):
            DatasetSplit("validation", [])


class TestStats:
    def test_hand_counted_average(self):
        # 10 and 20 whitespace tokens -> 15.0
        split = DatasetSplit("train", [
            Instance("a", " ".join(["w"] * 10), "@placeholder", ("x", "y")),
            Instance("b", " ".join(["w"] * 20), "@placeholder", ("x", "y")),
        ])
        tok = WhitespaceTokenizer.from_texts(["w"])
        stats = split_stats(split, tok)
        assert stats.count == 2
        assert stats.avg_passage_token_length == 15.0
        assert stats.avg_passage_word_length == 15.0

    def test_empty_split(self):
        with pytest.raises(CorpusError):
            split_stats(DatasetSplit("dev", []), WhitespaceTokenizer.from_texts([]))

    def test_reordering_invariant(self):
        insts = [Instance(str(k), "w " * k, "@placeholder", ("x", "y")) for k in range(1, 6)]
        tok = WhitespaceTokenizer.from_texts(["w"])
        a = split_stats(DatasetSplit("train", insts), tok)
        b = split_stats(DatasetSplit("train", insts[::-1]), tok)
        assert a.count == b.count
        assert a.avg_passage_token_length == pytest.approx(b.avg_passage_token_length, abs=1e-12)


text = st.text(st.characters(blacklist_categories=("Cs",)), max_size=40)
candidate = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=10).filter(str.strip)


@st.composite
def instances(draw):
    n = draw(st.integers(2, 6))
    cands = tuple(draw(st.lists(candidate, min_size=n, max_size=n)))
    before, after = draw(text), draw(text)
    gold = draw(st.one_of(st.none(), st.integers(0, n - 1)))
    return Instance(draw(st.text(min_size=1, max_size=5)), draw(text), f"{before}@placeholder{after}".replace("@placeholder@placeholder", "@placeholder"), cands, gold)


@settings(max_examples=60, deadline=None)
@given(st.lists(instances(), max_size=6, unique_by=lambda i: i.id))
def test_round_trip(tmp_path_factory, insts):
    insts = [i for i in insts if not validate_instance(i)]
    path = tmp_path_factory.mktemp("rt") / "train.jsonl"
    write_jsonl(DatasetSplit("train", insts), path)
    back = load_jsonl(path)
    assert back.instances == insts
    assert dumps_split(back) == path.read_text(encoding="utf-8")
    assert all(validate_instance(i) == [] for i in back)
