"""Task-adaptive pretraining data: in-domain MLM, within-task sequences, sentence pairs."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import regex
import torch

from .corpus import DatasetSplit
from .encoder import pad_batch
from .mcscorer import GradientAccumulator
from .textprep import build_inputs
from .tokenization import Tokenizer

logger = logging.getLogger(__name__)

SENTENCE_END = regex.compile(r"(?<=[.!?])\s+")


class TaptError(ValueError):
    pass


@dataclass(frozen=True)
class MlmExample:
    token_ids: tuple[int, ...]
    positions: tuple[int, ...]
    labels: tuple[int, ...]

    def restore(self) -> tuple[int, ...]:
        """Undo the masking."""
        ids = list(self.token_ids)
        for pos, lab in zip(self.positions, self.labels):
            ids[pos] = lab
        return tuple(ids)


@dataclass(frozen=True)
class SentencePair:
    a: tuple[int, ...]
    b: tuple[int, ...]
    is_next: bool


def gen_within_task(split: DatasetSplit, tokenizer: Tokenizer, max_len: int = 256, stride: Optional[int] = None) -> list[list[int]]:
    """Gold-filled ``[CLS] Q-A [SEP] P [SEP]`` sequences, one per passage chunk."""
    out = []
    for inst in split:
        if inst.gold_index is None:
            raise TaptError(f"instance {inst.id} is unlabeled")
        base = inst.original()
        gold_only = replace(base, candidates=(base.candidates[base.gold_index],), gold_index=0)
        out.extend(list(inp.token_ids) for inp in build_inputs(gold_only, tokenizer, max_len, stride))
    return out


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def gen_in_domain_mlm(
    documents: Sequence[str],
    tokenizer: Tokenizer,
    mask_rate: float = 0.15,
    seed: int = 0,
    max_len: Optional[int] = 256,
) -> list[MlmExample]:
    """Plain replace-with-mask examples, ``[CLS] tokens [SEP]`` each.

    Documents longer than ``max_len`` are cut into consecutive windows. Each
    example masks round(rate * n) of its n non-special tokens, chosen
    uniformly without replacement.
    """
    if not 0.0 < mask_rate < 1.0:
        raise TaptError(f"mask rate must be in (0, 1), got {mask_rate}")
    if not documents:
        raise TaptError("no documents")
    rng = np.random.default_rng(seed)
    body = None if max_len is None else max_len - 2
    if body is not None and body < 1:
        raise TaptError("max_len too small")
    out = []
    for doc in documents:
        ids = tokenizer.tokenize(doc)
        windows = [ids] if body is None or not ids else [ids[i : i + body] for i in range(0, len(ids), body)]
        for window in windows:
            seq = [tokenizer.cls_id, *window, tokenizer.sep_id]
            eligible = [i for i, t in enumerate(seq) if t not in tokenizer.special_ids]
            n_mask = min(round_half_up(mask_rate * len(eligible)), len(eligible))
            positions = sorted(int(p) for p in rng.choice(eligible, size=n_mask, replace=False)) if n_mask else []
            labels = [seq[p] for p in positions]
            for p in positions:
                seq[p] = tokenizer.mask_id
            out.append(MlmExample(tuple(seq), tuple(positions), tuple(labels)))
    return out


def split_sentences(text: str) -> list[str]:
    """Split on whitespace following terminal punctuation."""
    return [s.strip() for s in SENTENCE_END.split(text.strip()) if s.strip()]


def gen_nsp_pairs(
    documents: Sequence[str],
    tokenizer: Tokenizer,
    seed: int = 0,
    all_true: bool = False,
) -> list[SentencePair]:
    """One pair per consecutive-sentence slot; half of them get a foreign B.

    For ``N`` slots, exactly ``N // 2`` (chosen by the seeded sampler) have
    their second sentence replaced by a random sentence from another
    document.
    """
    docs = [split_sentences(d) for d in documents]
    for k, sents in enumerate(docs):
        if len(sents) < 2:
            raise TaptError(f"document {k} has fewer than 2 sentences")
    slots = [(d, i) for d, sents in enumerate(docs) for i in range(len(sents) - 1)]
    rng = np.random.default_rng(seed)
    n_false = 0 if all_true else len(slots) // 2
    if n_false and len(docs) < 2:
        raise TaptError("false pairs need at least 2 documents")
    false_slots = set(int(i) for i in rng.choice(len(slots), size=n_false, replace=False)) if n_false else set()
    pairs = []
    for s, (d, i) in enumerate(slots):
        a = docs[d][i]
        if s in false_slots:
            other = int(rng.choice([j for j in range(len(docs)) if j != d]))
            b = docs[other][int(rng.integers(len(docs[other])))]
            is_next = False
        else:
            b = docs[d][i + 1]
            is_next = True
        pairs.append(SentencePair(tuple(tokenizer.tokenize(a)), tuple(tokenizer.tokenize(b)), is_next))
    return pairs


def mlm_loss(encoder, examples: Sequence[MlmExample], pad_id: int) -> torch.Tensor:
    """Mean cross-entropy over every masked position in ``examples``."""
    ids, mask = pad_batch([ex.token_ids for ex in examples], pad_id)
    logits = encoder.mlm_logits(ids, mask)
    rows = torch.tensor([b for b, ex in enumerate(examples) for _ in ex.positions], dtype=torch.long)
    cols = torch.tensor([p for ex in examples for p in ex.positions], dtype=torch.long)
    if rows.numel() == 0:
        return logits.sum() * 0.0
    labels = torch.tensor([lab for ex in examples for lab in ex.labels], dtype=torch.long)
    return torch.nn.functional.cross_entropy(logits[rows, cols], labels)


def pretrain_mlm(
    encoder,
    examples: Sequence[MlmExample],
    tokenizer: Tokenizer,
    epochs: int = 1,
    lr: float = 1e-3,
    accumulation_steps: int = 8,
    weight_decay: float = 0.01,
    seed: int = 0,
) -> list[float]:
    """Continue MLM training on generated examples; returns mean loss per epoch."""
    if not examples:
        return []
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    params = [p for p in encoder.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(params, lr=lr, weight_decay=weight_decay)
    optimizer.zero_grad(set_to_none=True)
    acc = GradientAccumulator(optimizer, params, accumulation_steps)
    history = []
    encoder.train()
    for epoch in range(epochs):
        total = 0.0
        for idx in rng.permutation(len(examples)):
            ex = examples[int(idx)]
            if not ex.positions:
                continue
            loss = mlm_loss(encoder, [ex], tokenizer.pad_id)
            if not torch.isfinite(loss):
                raise TaptError(f"non-finite MLM loss at epoch {epoch + 1}")
            total += loss.item()
            acc.backward(loss)
        acc.flush()
        history.append(total / len(examples))
        logger.info("mlm epoch %d loss %.4f", epoch + 1, history[-1])
    encoder.eval()
    return history
