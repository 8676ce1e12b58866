"""Small generated datasets for smoke runs, tests and demos.

Words are opaque tokens (``f17``, ``c3`` ...) so the whitespace tokenizer
gives one id per word.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .corpus import PLACEHOLDER, DatasetSplit, Instance

FILLERS = tuple(f"f{i}" for i in range(40))
QUESTION_WORDS = tuple(f"q{i}" for i in range(10))
CONTENT_WORDS = tuple(f"c{i}" for i in range(24))
DISTRACTOR_WORDS = tuple(f"d{i}" for i in range(20))


def _question(rng: np.random.Generator) -> str:
    words = list(rng.choice(QUESTION_WORDS, size=4, replace=False))
    words.insert(int(rng.integers(0, 5)), PLACEHOLDER)
    return " ".join(words) + " ."


def _passage(rng: np.random.Generator, length: int, inserts: list[str]) -> str:
    words = list(rng.choice(FILLERS, size=length))
    for w in inserts:
        words.insert(int(rng.integers(0, len(words) + 1)), w)
    return " ".join(words)


def _place(gold: str, others: list[str], rng: np.random.Generator) -> tuple[tuple[str, ...], int]:
    gold_index = int(rng.integers(0, len(others) + 1))
    cands = list(others)
    cands.insert(gold_index, gold)
    return tuple(cands), gold_index


def separable_split(
    n: int,
    seed: int = 0,
    name: str = "train",
    n_candidates: int = 5,
    passage_len: int = 12,
) -> DatasetSplit:
    """Gold words come from one pool and distractors from a disjoint one."""
    rng = np.random.default_rng(seed)
    golds = [f"g{i}" for i in range(8)]
    out = []
    for k in range(n):
        gold = str(rng.choice(golds))
        others = [str(w) for w in rng.choice(DISTRACTOR_WORDS, size=n_candidates - 1, replace=False)]
        cands, gi = _place(gold, others, rng)
        out.append(Instance(f"{name}-{k}", _passage(rng, passage_len, [gold]), _question(rng), cands, gi))
    return DatasetSplit(name, out, "synthetic")




def trap_word(gold: str) -> str:
    """The content word a biased masked LM predicts instead of ``gold``."""
    k = CONTENT_WORDS.index(gold)
    return CONTENT_WORDS[(k + 1) % len(CONTENT_WORDS)]


def trap_split(
    n: int,
    seed: int = 0,
    name: str = "train",
    trap_as_option: bool = False,
    n_candidates: int = 5,
    passage_len: int = 12,
) -> DatasetSplit:
    """The answer is the content word that occurs in the passage.

    Distractors come from a separate pool, so "pick the content word" fits
    the training data as well as reading the passage does. With
    ``trap_as_option`` one distractor is replaced by ``trap_word(gold)``, a
    content word missing from the passage, which defeats that shortcut.
    """
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        gold = str(rng.choice(CONTENT_WORDS))
        n_other = n_candidates - 1 - int(trap_as_option)
        others = [str(w) for w in rng.choice(DISTRACTOR_WORDS, size=n_other, replace=False)]
        if trap_as_option:
            others.insert(int(rng.integers(0, len(others) + 1)), trap_word(gold))
        cands, gi = _place(gold, others, rng)
        passage = _passage(rng, passage_len, [gold])
        out.append(Instance(f"{name}-{k}", passage, _question(rng), cands, gi))
    return DatasetSplit(name, out, "synthetic")


def random_split(
    n: int,
    seed: int = 0,
    name: str = "dev",
    n_candidates: int = 5,
    max_passage_len: int = 60,
    labeled: bool = True,
) -> DatasetSplit:
    """Unstructured instances with random passage lengths and labels."""
    rng = np.random.default_rng(seed)
    vocab = FILLERS + CONTENT_WORDS
    out = []
    for k in range(n):
        cands = tuple(str(w) for w in rng.choice(vocab, size=n_candidates, replace=False))
        length = int(rng.integers(0, max_passage_len + 1))
        gi: Optional[int] = int(rng.integers(0, n_candidates)) if labeled else None
        out.append(Instance(f"{name}-{k}", _passage(rng, length, []), _question(rng), cands, gi))
    return DatasetSplit(name, out, "synthetic")
