"""ReCAM-style dataset records: loading, validation, serialization, statistics."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

logger = logging.getLogger(__name__)

PLACEHOLDER = "@placeholder"
SPLIT_NAMES = ("train", "trial", "dev", "test")
TASK_TAGS = ("subtask1", "subtask2", "synthetic")


class CorpusError(ValueError):
    """Unreadable file, malformed record or duplicate id."""


@dataclass(frozen=True)
class Instance:
    """One passage/question/candidates triple with an optional gold index.

    ``n_augmented`` counts trailing candidates appended by negative
    augmentation; they are never gold and are dropped at prediction time.
    """

    id: str
    passage: str
    question: str
    candidates: tuple[str, ...]
    gold_index: Optional[int] = None
    n_augmented: int = 0
    nal_meta: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))

    @property
    def original_count(self) -> int:
        return len(self.candidates) - self.n_augmented

    @property
    def gold(self) -> Optional[str]:
        if self.gold_index is None:
            return None
        return self.candidates[self.gold_index]

    def original(self) -> "Instance":
        """Drop any augmented candidates."""
        if not self.n_augmented:
            return self
        return replace(
            self,
            candidates=self.candidates[: self.original_count],
            n_augmented=0,
            nal_meta=None,
        )


@dataclass
class DatasetSplit:
    name: str
    instances: list[Instance]
    task_tag: str = "synthetic"

    def __post_init__(self):
        if self.name not in SPLIT_NAMES:
            raise CorpusError(f"split name must be one of {SPLIT_NAMES}, got {self.name!r}")
        if self.task_tag not in TASK_TAGS:
            raise CorpusError(f"task tag must be one of {TASK_TAGS}, got {self.task_tag!r}")
        seen = set()
        for inst in self.instances:
            if inst.id in seen:
                raise CorpusError(f"duplicate instance id {inst.id!r} in split {self.name}")
            seen.add(inst.id)

    def __len__(self):
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def by_id(self) -> dict[str, Instance]:
        return {inst.id: inst for inst in self.instances}

    @property
    def labeled(self) -> bool:
        return all(inst.gold_index is not None for inst in self.instances)


@dataclass
class ValidationReport:
    """Outcome of ingesting one file."""

    total: int = 0
    accepted: int = 0
    rejected: int = 0
    issues: dict[str, list[str]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "accepted": self.accepted,
            "rejected": self.rejected,
            "issues": self.issues,
        }


@dataclass(frozen=True)
class Stats:
    count: int
    avg_passage_token_length: float
    avg_passage_word_length: float


def validate_instance(instance: Instance) -> list[str]:
    """Return the list of invariant violations; empty when the instance is valid."""
    issues = []
    markers = instance.question.count(PLACEHOLDER) if isinstance(instance.question, str) else 0
    if markers == 0:
        issues.append("missing placeholder")
    elif markers > 1:
        issues.append("multiple placeholders")
    n = len(instance.candidates)
    if n < 2:
        issues.append(f"wrong candidate count: {n} (need at least 2)")
    for k, cand in enumerate(instance.candidates):
        if not isinstance(cand, str) or not cand.strip():
            issues.append(f"empty candidate at index {k}")
    if instance.gold_index is not None:
        if not isinstance(instance.gold_index, int) or not 0 <= instance.gold_index < n:
            issues.append(f"gold index {instance.gold_index!r} out of range [0, {n})")
        elif instance.gold_index >= instance.original_count:
            issues.append("gold index points at an augmented candidate")
    if not 0 <= instance.n_augmented < n:
        issues.append(f"augmented count {instance.n_augmented} inconsistent with {n} candidates")
    return issues


def infer_split_name(path: str | Path) -> str:
    stem = Path(path).stem.lower()
    for name in SPLIT_NAMES:
        if re.search(rf"(^|[^a-z]){name}([^a-z]|$)", stem):
            return name
    raise CorpusError(f"cannot infer split name from {str(path)!r}; pass it explicitly")


def record_to_instance(record: dict, default_id: str) -> Instance:
    """Convert one raw JSON record; raises KeyError on a missing field."""
    for key in ("article", "question", "option_0"):
        if key not in record:
            raise KeyError(key)
    candidates = []
    k = 0
    while f"option_{k}" in record:
        candidates.append(record[f"option_{k}"])
        k += 1
    extra = sorted(
        int(m.group(1)) for key in record if (m := re.fullmatch(r"option_(\d+)", key))
    )
    if extra and extra[-1] >= k:
        raise KeyError(f"option_{k}")
    label = record.get("label")
    if label is not None and not isinstance(label, int):
        if isinstance(label, str) and label.strip().lstrip("-").isdigit():
            label = int(label)
        else:
            raise CorpusError(f"label must be an integer, got {label!r}")
    nal_meta = record.get("nal_meta")
    n_augmented = int(nal_meta.get("appended", 1)) if nal_meta else 0
    return Instance(
        id=str(record.get("id", default_id)),
        passage=record["article"],
        question=record["question"],
        candidates=tuple(candidates),
        gold_index=label,
        n_augmented=n_augmented,
        nal_meta=nal_meta,
    )


def instance_to_record(instance: Instance) -> dict:
    record = {"id": instance.id, "article": instance.passage, "question": instance.question}
    for k, cand in enumerate(instance.candidates):
        record[f"option_{k}"] = cand
    if instance.gold_index is not None:
        record["label"] = instance.gold_index
    if instance.nal_meta is not None:
        record["nal_meta"] = instance.nal_meta
    return record


def ingest(
    path: str | Path, task_tag: str = "synthetic", name: Optional[str] = None
) -> tuple[DatasetSplit, ValidationReport]:
    """Read a JSON-Lines file into a split plus a validation report.

    Records that parse but break an ``Instance`` invariant are rejected and
    listed in the report. Unparseable lines, missing fields and duplicate ids
    raise ``CorpusError`` naming the line.
    """
    path = Path(path)
    if name is None:
        name = infer_split_name(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc

    report = ValidationReport()
    instances = []
    seen: dict[str, int] = {}
    # JSON strings may hold U+2028 and friends, so only "\n" ends a record
    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.rstrip("\r")
        if not line.strip():
            continue
        report.total += 1
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
        if not isinstance(record, dict):
            raise CorpusError(f"{path}:{lineno}: record is not a JSON object")
        try:
            inst = record_to_instance(record, default_id=str(report.total - 1))
        except KeyError as exc:
            raise CorpusError(f"{path}:{lineno}: missing field {exc.args[0]}") from exc
        except CorpusError as exc:
            raise CorpusError(f"{path}:{lineno}: {exc}") from exc
        if inst.id in seen:
            raise CorpusError(
                f"{path}:{lineno}: duplicate id {inst.id!r} (first seen on line {seen[inst.id]})"
            )
        seen[inst.id] = lineno
        issues = validate_instance(inst)
        if issues:
            report.rejected += 1
            report.issues[f"line {lineno} (id {inst.id})"] = issues
            continue
        report.accepted += 1
        instances.append(inst)
    if report.rejected:
        logger.warning("%s: rejected %d of %d records", path, report.rejected, report.total)
    return DatasetSplit(name=name, instances=instances, task_tag=task_tag), report


def load_jsonl(path: str | Path, task_tag: str = "synthetic", name: Optional[str] = None) -> DatasetSplit:
    return ingest(path, task_tag=task_tag, name=name)[0]


def dumps_split(split: DatasetSplit | Iterable[Instance]) -> str:
    lines = [json.dumps(instance_to_record(inst), ensure_ascii=False) for inst in split]
    return "".join(line + "\n" for line in lines)


def write_jsonl(split: DatasetSplit | Iterable[Instance], path: str | Path) -> None:
    Path(path).write_text(dumps_split(split), encoding="utf-8")


def split_stats(split: DatasetSplit, tokenizer) -> Stats:
    """Instance count plus mean passage length in tokenizer tokens and in words."""
    if not split.instances:
        raise CorpusError("average passage length is undefined for an empty split")
    tok = [len(tokenizer.tokenize(inst.passage)) for inst in split.instances]
    words = [len(inst.passage.split()) for inst in split.instances]
    n = len(split.instances)
    return Stats(count=n, avg_passage_token_length=sum(tok) / n, avg_passage_word_length=sum(words) / n)
