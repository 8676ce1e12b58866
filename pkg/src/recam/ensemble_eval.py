"""Ensembling, accuracy, passage-length buckets, transfer evaluation and error reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from .corpus import DatasetSplit
from .predictions import PredictionError, PredictionRecord, Predictions, argmax
from .tokenization import Tokenizer

DEFAULT_EDGES = (128, 256, 384, 512)


class EvaluationError(ValueError):
    pass


def _mean(values: Sequence[float]) -> float:
    if all(v == values[0] for v in values):
        return values[0]
    # exactly rounded sum, so the result does not depend on member order
    return math.fsum(values) / len(values)


def ensemble(members: Sequence[Predictions], model_id: str = "ensemble") -> Predictions:
    """Average member probability vectors per instance; argmax with ties to the lowest index."""
    if not members:
        raise EvaluationError("ensemble needs at least one member")
    ref_ids = [r.id for r in members[0]]
    maps = [m.by_id() for m in members]
    for k, m in enumerate(maps[1:], start=1):
        if set(m) != set(ref_ids):
            raise EvaluationError(f"member {k} covers a different id set than member 0")
    records = []
    for rid in ref_ids:
        vecs = [m[rid].probs for m in maps]
        width = len(vecs[0])
        if any(len(v) != width for v in vecs):
            raise EvaluationError(f"instance {rid}: members disagree on candidate count")
        mean = tuple(_mean(col) for col in zip(*vecs))
        records.append(PredictionRecord(rid, mean, argmax(mean)))
    return Predictions(records, model_id=model_id)


def _gold_map(preds: Predictions, split: DatasetSplit) -> dict[str, int]:
    gold = {}
    for inst in split:
        if inst.gold_index is None:
            raise EvaluationError(f"instance {inst.id} has no gold label")
        gold[inst.id] = inst.gold_index
    ids = {r.id for r in preds}
    if ids != set(gold):
        missing = sorted(set(gold) - ids)[:3]
        extra = sorted(ids - set(gold))[:3]
        raise EvaluationError(f"prediction ids do not match split ids (missing {missing}, unexpected {extra})")
    return gold


def accuracy(preds: Predictions, split: DatasetSplit) -> float:
    if not split.instances:
        raise EvaluationError("accuracy is undefined for an empty split")
    gold = _gold_map(preds, split)
    return sum(r.choice == gold[r.id] for r in preds) / len(gold)


@dataclass
class Bucket:
    low: Optional[int]
    high: Optional[int]
    count: int = 0
    correct: int = 0

    @property
    def accuracy(self) -> Optional[float]:
        return self.correct / self.count if self.count else None

    @property
    def label(self) -> str:
        lo = "0" if self.low is None else str(self.low)
        hi = "inf" if self.high is None else str(self.high)
        return f"[{lo}, {hi})"


@dataclass
class LengthBucketReport:
    edges: tuple[int, ...]
    buckets: list[Bucket] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(b.count for b in self.buckets)

    def to_dict(self) -> dict:
        return {
            "edges": list(self.edges),
            "buckets": [
                {"range": b.label, "low": b.low, "high": b.high, "count": b.count, "correct": b.correct, "accuracy": b.accuracy}
                for b in self.buckets
            ],
        }

    def table(self) -> str:
        lines = [f"{'passage tokens':<16}{'count':>8}{'accuracy':>10}"]
        for b in self.buckets:
            acc = "n/a" if b.accuracy is None else f"{b.accuracy:.4f}"
            lines.append(f"{b.label:<16}{b.count:>8}{acc:>10}")
        return "\n".join(lines)

    def csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["bucket", "count", "accuracy"])
        for b in self.buckets:
            writer.writerow([b.label, b.count, "" if b.accuracy is None else b.accuracy])
        return buf.getvalue()


def length_buckets(
    preds: Predictions,
    split: DatasetSplit,
    tokenizer: Tokenizer,
    edges: Sequence[int] = DEFAULT_EDGES,
) -> LengthBucketReport:
    """Accuracy per half-open passage-length bucket ``[edge_i, edge_{i+1})``."""
    edges = tuple(int(e) for e in edges)
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise EvaluationError(f"bucket edges must be strictly increasing, got {list(edges)}")
    gold = _gold_map(preds, split)
    bounds = [None, *edges, None]
    report = LengthBucketReport(edges, [Bucket(lo, hi) for lo, hi in zip(bounds, bounds[1:])])
    choice = {r.id: r.choice for r in preds}
    for inst in split:
        n = len(tokenizer.tokenize(inst.passage))
        k = sum(n >= e for e in edges)
        report.buckets[k].count += 1
        report.buckets[k].correct += choice[inst.id] == gold[inst.id]
    return report


@dataclass(frozen=True)
class TransferReport:
    source_task: str
    target_task: str
    accuracy: float
    count: int


def transfer_eval(
    encoder,
    head,
    tokenizer: Tokenizer,
    target: DatasetSplit,
    source_task: str,
    max_len: int = 256,
    stride: Optional[int] = None,
) -> TransferReport:
    """Evaluate a model trained on ``source_task`` on a labeled split from another task."""
    from .mcscorer import predict

    if not target.labeled:
        raise EvaluationError("transfer evaluation needs a labeled target split")
    preds = predict(target, encoder, head, tokenizer, max_len, stride)
    return TransferReport(source_task, target.task_tag, accuracy(preds, target), len(target))


@dataclass
class ErrorCase:
    id: str
    passage_excerpt: str
    question: str
    candidates: list[str]
    gold: int
    chosen: int
    confidence: float
    nal_token: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)


def error_report(
    preds: Predictions,
    split: DatasetSplit,
    augmentation: Optional[dict[str, dict]] = None,
    excerpt_chars: int = 300,
) -> list[ErrorCase]:
    """Wrong predictions, most confident first.

    ``augmentation`` maps instance id to its negative-augmentation metadata;
    when absent, metadata stored on the split's instances is used.
    """
    gold = _gold_map(preds, split)
    by_id = split.by_id()
    cases = []
    for r in preds:
        if r.choice == gold[r.id]:
            continue
        inst = by_id[r.id]
        meta = (augmentation or {}).get(r.id) or inst.nal_meta
        passage = inst.passage
        excerpt = passage if len(passage) <= excerpt_chars else passage[:excerpt_chars].rstrip() + " ..."
        cases.append(
            ErrorCase(
                id=r.id,
                passage_excerpt=excerpt,
                question=inst.question,
                candidates=list(inst.candidates[: inst.original_count]),
                gold=gold[r.id],
                chosen=r.choice,
                confidence=r.confidence,
                nal_token=None if not meta else meta.get("token"),
            )
        )
    cases.sort(key=lambda c: (-c.confidence, c.id))
    return cases


def format_error_case(case: ErrorCase) -> str:
    letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    answers = " ".join(f"({letters[k]}) {c}" for k, c in enumerate(case.candidates))
    lines = [
        f"Case {case.id} (confidence {case.confidence:.3f})",
        f"  Passage: {case.passage_excerpt}",
        f"  Question: {case.question}",
        f"  Answer: {answers}",
    ]
    if case.nal_token is not None:
        lines.append(f"  Negative augmented choice: ({letters[len(case.candidates)]}) {case.nal_token}")
    lines.append(f"  Right option: ({letters[case.gold]}) {case.candidates[case.gold]}")
    lines.append(f"  Wrong option: ({letters[case.chosen]}) {case.candidates[case.chosen]}")
    return "\n".join(lines)


__all__ = [
    "DEFAULT_EDGES",
    "Bucket",
    "ErrorCase",
    "EvaluationError",
    "LengthBucketReport",
    "PredictionError",
    "Predictions",
    "TransferReport",
    "accuracy",
    "ensemble",
    "error_report",
    "format_error_case",
    "length_buckets",
    "transfer_eval",
]
