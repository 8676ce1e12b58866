"""Zero-shot masked-LM probing and negative-candidate mining.

The question's placeholder is replaced by the mask token and the model's
distribution at that position is used two ways: to rank the given candidates
without any fine-tuning, and to mine the most probable non-gold word as an
extra wrong candidate for training.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

from .corpus import DatasetSplit, Instance
from .textprep import build_probe_input
from .tokenization import Tokenizer, normalize_surface

SIMILARITIES = ("mask-likelihood", "embedding-cosine")


class ProbeError(ValueError):
    pass


@dataclass(frozen=True)
class VocabDistribution:
    probs: np.ndarray
    instance_id: str = ""
    model_id: str = ""

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ProbeError("distribution must be a finite non-negative vector")
        if abs(p.sum() - 1.0) > 1e-6:
            raise ProbeError(f"distribution sums to {p.sum():.9f}, not 1")
        object.__setattr__(self, "probs", p)


@dataclass(frozen=True)
class NegativeCandidate:
    token: str
    token_id: int
    probability: float
    rank: int


@dataclass(frozen=True)
class RankResult:
    order: list[int]
    scores: np.ndarray


@dataclass(frozen=True)
class AugmentedInstance:
    original: Instance
    negatives: tuple[NegativeCandidate, ...]
    skipped: bool
    duplicates_distractor: bool

    @property
    def instance(self) -> Instance:
        """The original instance with the mined words appended as candidates."""
        first = self.negatives[0]
        meta = {
            "token": first.token,
            "probability": first.probability,
            "rank": first.rank,
            "skipped": self.skipped,
            "duplicate_of_distractor": self.duplicates_distractor,
            "appended": len(self.negatives),
        }
        if len(self.negatives) > 1:
            meta["negatives"] = [
                {"token": n.token, "probability": n.probability, "rank": n.rank} for n in self.negatives
            ]
        return replace(
            self.original,
            candidates=self.original.candidates + tuple(n.token for n in self.negatives),
            n_augmented=len(self.negatives),
            nal_meta=meta,
        )


def mask_distribution(instance: Instance, model, tokenizer: Tokenizer, max_len: Optional[int] = None) -> VocabDistribution:
    inp = build_probe_input(instance, tokenizer, max_len or model.max_positions)
    probs = model.mlm_distribution(inp)
    if len(probs) != tokenizer.vocab_size:
        raise ProbeError(f"model returned {len(probs)} probabilities for a vocabulary of {tokenizer.vocab_size}")
    return VocabDistribution(probs, instance_id=instance.id, model_id=getattr(model, "model_id", ""))


def _descending(probs: np.ndarray) -> np.ndarray:
    # highest probability first, ties to the lower id
    return np.lexsort((np.arange(len(probs)), -probs))


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def zero_shot_rank(
    instance: Instance,
    model,
    tokenizer: Tokenizer,
    similarity: str = "mask-likelihood",
    max_len: Optional[int] = None,
) -> RankResult:
    """Order the original candidates by similarity to the masked-LM prediction.

    ``mask-likelihood`` scores a candidate by the probability of its first
    token; ``embedding-cosine`` by the cosine between the top predicted
    token's embedding and the candidate's mean token embedding.
    """
    if similarity not in SIMILARITIES:
        raise ProbeError(f"similarity must be one of {SIMILARITIES}")
    dist = mask_distribution(instance.original(), model, tokenizer, max_len).probs
    cands = [tokenizer.candidate_ids(c) for c in instance.candidates[: instance.original_count]]
    if similarity == "mask-likelihood":
        scores = np.array([dist[ids[0]] if ids else 0.0 for ids in cands])
    else:
        top = next(int(i) for i in _descending(dist) if int(i) not in tokenizer.special_ids)
        ref = model.token_embedding(top)
        scores = np.array(
            [_cosine(ref, np.mean([model.token_embedding(i) for i in ids], axis=0)) if ids else 0.0 for ids in cands]
        )
    order = sorted(range(len(scores)), key=lambda k: (-scores[k], k))
    return RankResult(order=order, scores=scores)


def top_negatives(
    distribution: VocabDistribution | np.ndarray,
    tokenizer: Tokenizer,
    k: int = 1,
    exclude: Iterable[str] = (),
) -> list[NegativeCandidate]:
    """The ``k`` most probable words whose surface form is not excluded.

    Special tokens and tokens with an empty surface are never returned. Ranks
    count every eligible token, excluded ones included, so a rank above the
    list position means something was skipped.
    """
    if k < 1:
        raise ProbeError("k must be >= 1")
    probs = distribution.probs if isinstance(distribution, VocabDistribution) else np.asarray(distribution, float)
    banned = {normalize_surface(s) for s in exclude}
    found: list[NegativeCandidate] = []
    rank = 0
    for i in _descending(probs):
        i = int(i)
        if i in tokenizer.special_ids:
            continue
        surface = tokenizer.surface(i).strip()
        norm = normalize_surface(surface)
        if not norm:
            continue
        rank += 1
        if norm in banned:
            continue
        found.append(NegativeCandidate(surface, i, float(probs[i]), rank))
        if len(found) == k:
            return found
    raise ProbeError(f"only {len(found)} eligible tokens, {k} requested")


def augment_instance(
    instance: Instance,
    model,
    tokenizer: Tokenizer,
    k: int = 1,
    max_len: Optional[int] = None,
) -> AugmentedInstance:
    """Append the model's most probable non-gold word(s) as wrong candidates."""
    if instance.gold_index is None:
        raise ProbeError(f"instance {instance.id}: augmentation requires gold")
    base = instance.original()
    dist = mask_distribution(base, model, tokenizer, max_len)
    gold = base.candidates[base.gold_index]
    negatives = top_negatives(dist, tokenizer, k=k, exclude={gold})
    others = {normalize_surface(c) for j, c in enumerate(base.candidates) if j != base.gold_index}
    return AugmentedInstance(
        original=base,
        negatives=tuple(negatives),
        skipped=negatives[0].rank > 1,
        duplicates_distractor=any(normalize_surface(n.token) in others for n in negatives),
    )


def augment_split(split: DatasetSplit, model, tokenizer: Tokenizer, k: int = 1, max_len: Optional[int] = None) -> DatasetSplit:
    return DatasetSplit(
        name=split.name,
        instances=[augment_instance(inst, model, tokenizer, k, max_len).instance for inst in split],
        task_tag=split.task_tag,
    )


def zero_shot_accuracy(
    split: DatasetSplit,
    model,
    tokenizer: Tokenizer,
    similarity: str = "mask-likelihood",
    max_len: Optional[int] = None,
) -> float:
    if not split.instances:
        raise ProbeError("zero-shot accuracy is undefined for an empty split")
    correct = 0
    for inst in split:
        if inst.gold_index is None:
            raise ProbeError(f"instance {inst.id} has no gold label")
        correct += zero_shot_rank(inst, model, tokenizer, similarity, max_len).order[0] == inst.gold_index
    return correct / len(split.instances)
