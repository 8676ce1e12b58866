"""Multiple-choice scoring, label-smoothed loss and the fine-tuning loop.

Each candidate is substituted into the question, paired with every passage
chunk and encoded; a dense head maps each pooled vector to a logit, chunk
logits are averaged per candidate and a softmax over candidates gives the
scores.

Optimizer contract (AdamW, decoupled weight decay). For each parameter
``theta`` with averaged gradient ``g`` at update ``t``::

    theta <- theta - lr * weight_decay * theta
    m <- beta1 * m + (1 - beta1) * g
    v <- beta2 * v + (1 - beta2) * g**2
    theta <- theta - lr * (m / (1 - beta1**t)) / (sqrt(v / (1 - beta2**t)) + eps)
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .corpus import DatasetSplit, Instance
from .encoder import pad_batch
from .predictions import PredictionRecord, Predictions, argmax
from .textprep import build_inputs

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScoreVector:
    instance_id: str
    logits: np.ndarray
    probs: np.ndarray

    @property
    def choice(self) -> int:
        return argmax(list(self.probs))


@dataclass(frozen=True)
class SmoothedTarget:
    K: int
    gold_index: int
    epsilon: float
    y: np.ndarray


def softmax(logits: Sequence[float]) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    e = np.exp(x - x.max())
    return e / e.sum()


def smooth_targets(K: int, gold_index: int, epsilon: float) -> SmoothedTarget:
    """``1 - epsilon`` on the gold class, ``epsilon / (K - 1)`` on each other class."""
    if K < 2:
        raise ValueError(f"need at least 2 classes, got K={K}")
    if not 0 <= gold_index < K:
        raise ValueError(f"gold index {gold_index} out of range [0, {K})")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must be in [0, 1), got {epsilon}")
    y = np.full(K, epsilon / (K - 1), dtype=np.float64)
    y[gold_index] = 1.0 - epsilon
    return SmoothedTarget(K, gold_index, epsilon, y)


def smoothed_cross_entropy(scores: ScoreVector | Sequence[float], target: SmoothedTarget) -> float:
    p = np.asarray(scores.probs if isinstance(scores, ScoreVector) else scores, dtype=np.float64)
    if p.shape != target.y.shape:
        raise ValueError(f"{len(p)} scores against {target.K} targets")
    return float(-(target.y * np.log(np.maximum(p, PROB_FLOOR))).sum())


def smoothed_cross_entropy_logits(logits: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Differentiable counterpart of ``smoothed_cross_entropy`` on raw logits."""
    p = torch.softmax(logits, dim=-1)
    return -(y * torch.log(torch.clamp(p, min=PROB_FLOOR))).sum()


def aggregate_chunk_logits(chunk_logits: torch.Tensor, candidate_index: torch.Tensor, n: int) -> torch.Tensor:
    """Mean chunk logit per candidate."""
    sums = torch.zeros(n, dtype=chunk_logits.dtype).index_add(0, candidate_index, chunk_logits)
    counts = torch.bincount(candidate_index, minlength=n).to(chunk_logits.dtype)
    if bool((counts == 0).any()):
        raise ValueError("every candidate needs at least one chunk")
    return sums / counts


@dataclass(frozen=True)
class InstanceBatch:
    """All (candidate, chunk) inputs of one instance, padded."""

    ids: torch.Tensor
    mask: torch.Tensor
    candidate_index: torch.Tensor
    n_candidates: int


def encode_instance(instance: Instance, tokenizer, max_len: int = 256, stride: Optional[int] = None) -> InstanceBatch:
    inputs = build_inputs(instance, tokenizer, max_len, stride)
    ids, mask = pad_batch([inp.token_ids for inp in inputs], tokenizer.pad_id)
    index = torch.tensor([inp.candidate_index for inp in inputs], dtype=torch.long)
    return InstanceBatch(ids, mask, index, len(instance.candidates))


def batch_logits(batch: InstanceBatch, encoder, head) -> torch.Tensor:
    chunk_logits = head(encoder.pooled(batch.ids, batch.mask))
    return aggregate_chunk_logits(chunk_logits, batch.candidate_index, batch.n_candidates)


def candidate_logits(
    instance: Instance,
    encoder,
    head,
    tokenizer,
    max_len: int = 256,
    stride: Optional[int] = None,
) -> torch.Tensor:
    return batch_logits(encode_instance(instance, tokenizer, max_len, stride), encoder, head)


def score_instance(
    instance: Instance,
    encoder,
    head,
    tokenizer,
    max_len: int = 256,
    stride: Optional[int] = None,
    batch: Optional[InstanceBatch] = None,
) -> ScoreVector:
    """Per-candidate logits and softmax probabilities, stochastic layers off."""
    if batch is None:
        batch = encode_instance(instance, tokenizer, max_len, stride)
    modes = [m.training for m in (encoder, head)]
    encoder.eval()
    head.eval()
    try:
        with torch.no_grad():
            logits = batch_logits(batch, encoder, head)
    finally:
        encoder.train(modes[0])
        head.train(modes[1])
    logits = logits.double().numpy()
    return ScoreVector(instance.id, logits, softmax(logits))


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 12
    micro_batch_size: int = 1
    accumulation_steps: int = 32
    max_len: int = 256
    stride: Optional[int] = None
    epsilon: float = 0.1
    seed: int = 0
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    keep_best: bool = True
    early_stop_accuracy: Optional[float] = None

    def __post_init__(self):
        self.betas = tuple(self.betas)
        for name in ("lr", "micro_batch_size", "accumulation_steps", "max_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.stride is not None and self.stride <= 0:
            raise ValueError("stride must be positive")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must be in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


# learning rates / epochs / max length used for the large pretrained encoders,
# plus a preset sized for the reference encoder
PRESETS = {
    "roberta": dict(lr=9e-6, epochs=12, max_len=256),
    "albert": dict(lr=1e-5, epochs=8, max_len=128),
    "deberta": dict(lr=1e-5, epochs=12, max_len=256),
    "reference": dict(lr=1e-3, epochs=12, max_len=256),
}


def preset(name: str, **overrides) -> TrainConfig:
    return TrainConfig(**{**PRESETS[name], **overrides})


class GradientAccumulator:
    """Sum per-instance gradients and apply their mean every ``steps`` instances."""

    def __init__(self, optimizer: torch.optim.Optimizer, params: Sequence[torch.nn.Parameter], steps: int):
        self.optimizer = optimizer
        self.params = list(params)
        self.steps = steps
        self.count = 0
        self.updates = 0

    def backward(self, loss: torch.Tensor) -> bool:
        loss.backward()
        self.count += 1
        if self.count == self.steps:
            return self.flush()
        return False

    def flush(self) -> bool:
        """Apply a pending partial window, if any."""
        if self.count == 0:
            return False
        scale = 1.0 / self.count
        for p in self.params:
            if p.grad is not None:
                p.grad.mul_(scale)
        self.optimizer.step()
        self.optimizer.zero_grad(set_to_none=True)
        self.count = 0
        self.updates += 1
        return True


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    updates: int
    dev_accuracy: Optional[float] = None


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_dev_accuracy: Optional[float] = None


def _labeled(split: DatasetSplit, what: str) -> None:
    for inst in split:
        if inst.gold_index is None:
            raise TrainingError(f"{what} instance {inst.id} is unlabeled")


def _dev_accuracy(preds: Predictions, split: DatasetSplit) -> float:
    gold = {inst.id: inst.gold_index for inst in split}
    return sum(r.choice == gold[r.id] for r in preds) / max(len(preds), 1)


def train(
    train_split: DatasetSplit,
    dev_split: Optional[DatasetSplit],
    encoder,
    head,
    tokenizer,
    config: TrainConfig,
) -> TrainResult:
    """Fine-tune ``encoder`` and ``head`` in place.

    Instances are visited one at a time in a seeded shuffle; gradients are
    averaged over ``micro_batch_size * accumulation_steps`` instances per
    update. With a dev split and ``keep_best``, the parameters of the best dev
    epoch (earliest on ties) are restored at the end.
    """
    _labeled(train_split, "training")
    if dev_split is not None:
        _labeled(dev_split, "dev")
    result = TrainResult()
    if config.epochs == 0 or not train_split.instances:
        return result

    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    params = [p for m in (encoder, head) for p in m.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(
        params, lr=config.lr, betas=config.betas, eps=config.adam_eps, weight_decay=config.weight_decay
    )
    optimizer.zero_grad(set_to_none=True)
    acc = GradientAccumulator(optimizer, params, config.micro_batch_size * config.accumulation_steps)
    best_state = None
    instances = train_split.instances
    batches = [encode_instance(inst, tokenizer, config.max_len, config.stride) for inst in instances]
    dev_batches = None
    if dev_split is not None:
        dev_batches = [encode_instance(inst, tokenizer, config.max_len, config.stride) for inst in dev_split]

    for epoch in range(1, config.epochs + 1):
        encoder.train()
        head.train()
        total = 0.0
        for idx in rng.permutation(len(instances)):
            inst = instances[int(idx)]
            logits = batch_logits(batches[int(idx)], encoder, head)
            y = torch.as_tensor(
                smooth_targets(len(inst.candidates), inst.gold_index, config.epsilon).y, dtype=logits.dtype
            )
            loss = smoothed_cross_entropy_logits(logits, y)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss.item()} at epoch {epoch}, instance {inst.id}")
            total += loss.item()
            acc.backward(loss)
        acc.flush()
        record = EpochRecord(epoch, total / len(instances), acc.updates)
        if dev_split is not None and dev_split.instances:
            preds = predict(dev_split, encoder, head, tokenizer, config.max_len, config.stride, batches=dev_batches)
            record.dev_accuracy = _dev_accuracy(preds, dev_split)
            if result.best_dev_accuracy is None or record.dev_accuracy > result.best_dev_accuracy:
                result.best_dev_accuracy = record.dev_accuracy
                result.best_epoch = epoch
                if config.keep_best:
                    best_state = (copy.deepcopy(encoder.state_dict()), copy.deepcopy(head.state_dict()))
        result.history.append(record)
        logger.info(
            "epoch %d loss %.4f updates %d dev_acc %s", epoch, record.train_loss, record.updates, record.dev_accuracy
        )
        if (
            config.early_stop_accuracy is not None
            and record.dev_accuracy is not None
            and record.dev_accuracy >= config.early_stop_accuracy
        ):
            break

    if best_state is not None:
        encoder.load_state_dict(best_state[0])
        head.load_state_dict(best_state[1])
    return result


def restrict(scores: ScoreVector, n_original: int) -> np.ndarray:
    """Drop augmented slots and renormalize over the original candidates."""
    p = scores.probs[:n_original]
    return p / p.sum()


def predict(
    split: DatasetSplit,
    encoder,
    head,
    tokenizer,
    max_len: int = 256,
    stride: Optional[int] = None,
    model_id: str = "",
    batches: Optional[Sequence[InstanceBatch]] = None,
) -> Predictions:
    """Argmax over each instance's original candidates (ties to lowest index)."""
    records = []
    for k, inst in enumerate(split):
        batch = None if batches is None else batches[k]
        scores = score_instance(inst, encoder, head, tokenizer, max_len, stride, batch=batch)
        probs = restrict(scores, inst.original_count)
        if not math.isfinite(float(probs.sum())):
            raise TrainingError(f"non-finite scores for instance {inst.id}")
        records.append(PredictionRecord(inst.id, tuple(probs), argmax(list(probs))))
    return Predictions(records, model_id=model_id)
