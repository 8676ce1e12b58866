"""Prediction records and their JSON-Lines file format (id, probs, choice)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence


class PredictionError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    probs: tuple[float, ...]
    choice: int

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if not self.probs:
            raise PredictionError(f"{self.id}: empty probability vector")
        if abs(sum(self.probs) - 1.0) > 1e-6:
            raise PredictionError(f"{self.id}: probabilities sum to {sum(self.probs)}")
        if not 0 <= self.choice < len(self.probs):
            raise PredictionError(f"{self.id}: choice {self.choice} out of range")

    @property
    def confidence(self) -> float:
        return self.probs[self.choice]


@dataclass
class Predictions:
    records: list[PredictionRecord]
    model_id: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise PredictionError("prediction ids must be unique")

    def __len__(self):
        return len(self.records)

    def __iter__(self) -> Iterator[PredictionRecord]:
        return iter(self.records)

    def by_id(self) -> dict[str, PredictionRecord]:
        return {r.id: r for r in self.records}


def argmax(values: Sequence[float]) -> int:
    """Index of the largest value; ties go to the lowest index."""
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def dumps_predictions(preds: Predictions) -> str:
    return "".join(
        json.dumps({"id": r.id, "probs": list(r.probs), "choice": r.choice}) + "\n" for r in preds.records
    )


def write_predictions(preds: Predictions, path: str | Path) -> None:
    Path(path).write_text(dumps_predictions(preds), encoding="utf-8")


def read_predictions(path: str | Path, model_id: str | None = None) -> Predictions:
    path = Path(path)
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").split("\n"), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
            records.append(PredictionRecord(str(raw["id"]), raw["probs"], int(raw["choice"])))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise PredictionError(f"{path}:{lineno}: malformed prediction record ({exc})") from exc
    return Predictions(records, model_id=model_id if model_id is not None else path.stem)
