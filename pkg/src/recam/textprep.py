"""Model inputs: placeholder substitution, masking and sliding-window chunking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .corpus import PLACEHOLDER, Instance
from .tokenization import Tokenizer


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class EncodedInput:
    """``[CLS] question-with-answer [SEP] passage-chunk [SEP]`` as token ids.

    ``mask_position`` is set only for probe inputs, where the question keeps a
    mask token instead of a candidate.
    """

    token_ids: tuple[int, ...]
    candidate_index: int
    chunk_index: int
    instance_id: str
    mask_position: Optional[int] = None

    def __len__(self):
        return len(self.token_ids)


def _check_marker(question: str) -> None:
    count = question.count(PLACEHOLDER)
    if count == 0:
        raise InputError("missing placeholder")
    if count > 1:
        raise InputError(f"multiple placeholders ({count})")


def substitute(question: str, candidate: str) -> str:
    """Fill the placeholder with ``candidate``."""
    _check_marker(question)
    if not candidate or not candidate.strip():
        raise InputError("empty candidate")
    return question.replace(PLACEHOLDER, candidate)


def mask_question(question: str, tokenizer: Tokenizer) -> str:
    _check_marker(question)
    return question.replace(PLACEHOLDER, tokenizer.mask_token)


def chunk_passage(token_ids: Sequence[int], budget: int, stride: int) -> list[list[int]]:
    """Overlapping windows of at most ``budget`` tokens, ``stride`` apart.

    The last window ends at the final token; an empty passage gives no chunks.
    """
    if budget < 1:
        raise InputError(f"budget must be >= 1, got {budget}")
    if not 1 <= stride <= budget:
        raise InputError(f"stride must be in [1, budget={budget}], got {stride}")
    ids = list(token_ids)
    chunks = []
    start = 0
    while True:
        chunks.append(ids[start : start + budget])
        if start + budget >= len(ids):
            break
        start += stride
    return chunks if ids else []


def default_stride(budget: int) -> int:
    return max(1, budget // 2)


def _wrap(prefix: Sequence[int], chunk: Sequence[int], tokenizer: Tokenizer) -> tuple[int, ...]:
    return (tokenizer.cls_id, *prefix, tokenizer.sep_id, *chunk, tokenizer.sep_id)


def build_inputs(
    instance: Instance,
    tokenizer: Tokenizer,
    max_len: int = 256,
    stride: Optional[int] = None,
) -> list[EncodedInput]:
    """One input per (candidate, passage chunk), candidate-major.

    All candidates share one chunking of the passage, sized for the longest
    question-with-answer so every input fits in ``max_len``.
    """
    qa = [tokenizer.tokenize(substitute(instance.question, cand)) for cand in instance.candidates]
    longest = max(len(q) for q in qa)
    budget = max_len - longest - 3
    if budget < 1:
        raise InputError(
            f"instance {instance.id}: question with answer needs {longest + 3} of max_len={max_len} "
            "tokens, leaving no room for the passage"
        )
    passage = tokenizer.tokenize(instance.passage)
    chunks = chunk_passage(passage, budget, stride or default_stride(budget)) or [[]]
    return [
        EncodedInput(_wrap(q, chunk, tokenizer), c, j, instance.id)
        for c, q in enumerate(qa)
        for j, chunk in enumerate(chunks)
    ]


def build_probe_input(instance: Instance, tokenizer: Tokenizer, max_len: int = 256) -> EncodedInput:
    """Masked question plus the first passage chunk, for MLM probing."""
    q = tokenizer.tokenize(mask_question(instance.question, tokenizer))
    if q.count(tokenizer.mask_id) != 1:
        raise InputError(f"instance {instance.id}: masked question must hold exactly one mask token")
    budget = max_len - len(q) - 3
    if budget < 1:
        raise InputError(f"instance {instance.id}: masked question does not fit max_len={max_len}")
    passage = tokenizer.tokenize(instance.passage)[:budget]
    ids = _wrap(q, passage, tokenizer)
    return EncodedInput(ids, -1, 0, instance.id, mask_position=1 + q.index(tokenizer.mask_id))
