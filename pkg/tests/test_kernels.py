import os
import subprocess
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recam import _kernels
from recam._kernels import PyMergeTable, compiled_merge_table

Compiled = compiled_merge_table()
needs_ext = pytest.mark.skipif(Compiled is None, reason="compiled kernel not built")

merge_rules = st.lists(
    st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(6, 30)), min_size=0, max_size=25
)
words = st.lists(st.integers(0, 30), min_size=0, max_size=40)


def table_args(rules):
    return [r[0] for r in rules], [r[1] for r in rules], [r[2] for r in rules]


class TestPureKernel:
    def test_lowest_rank_first(self):
        # (1, 2) outranks (0, 1), so 0 1 2 becomes 0 [12]
        t = PyMergeTable([1, 0], [2, 1], [9, 8])
        assert t.apply([0, 1, 2]) == [0, 9]

    def test_all_occurrences_merged_in_one_pass(self):
        t = PyMergeTable([0], [1], [7])
        assert t.apply([0, 1, 0, 1, 2]) == [7, 7, 2]

    def test_overlapping_pair_left_to_right(self):
        t = PyMergeTable([3], [3], [4])
        assert t.apply([3, 3, 3]) == [4, 3]

    def test_chained_merges(self):
        t = PyMergeTable([0, 5], [1, 2], [5, 6])
        assert t.apply([0, 1, 2]) == [6]

    def test_duplicate_rule_keeps_first_rank(self):
        t = PyMergeTable([0, 1, 0], [1, 2, 1], [7, 8, 9])
        assert t.apply([0, 1, 2]) == [7, 2]
        assert len(t) == 2

    def test_empty_and_single(self):
        t = PyMergeTable([0], [1], [2])
        assert t.apply([]) == []
        assert t.apply([0]) == [0]

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            PyMergeTable([0], [1, 2], [3])


@needs_ext
class TestCompiledMatchesPure:
    @settings(max_examples=300, deadline=None)
    @given(merge_rules, words)
    def test_equivalent(self, rules, word):
        args = table_args(rules)
        assert Compiled(*args).apply(word) == PyMergeTable(*args).apply(word)

    @settings(max_examples=50, deadline=None)
    @given(merge_rules, st.lists(words, max_size=8))
    def test_apply_many(self, rules, batch):
        args = table_args(rules)
        assert Compiled(*args).apply_many(batch) == PyMergeTable(*args).apply_many(batch)

    def test_rejects_negative_ids(self):
        with pytest.raises(ValueError):
            Compiled([-1], [0], [1])

    def test_backend_reported(self):
        assert Compiled.backend == "cython"


def test_env_forces_fallback():
    env = dict(os.environ, RECAM_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "import recam; print(recam.KERNEL_BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"


def test_default_backend_is_compiled_when_built():
    if os.environ.get("RECAM_PURE_PYTHON", "") not in ("", "0"):
        pytest.skip("fallback forced")
    assert _kernels.BACKEND == ("cython" if Compiled is not None else "python")
