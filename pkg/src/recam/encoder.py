"""Encoder contract and a small pre-norm transformer reference encoder.

Any encoder used by the scorer implements ``pooled`` (batched, differentiable)
and the per-input helpers ``encode``, ``mlm_distribution`` and
``token_embedding``. The reference encoder pools the hidden state at the
first position (the CLS token) with no extra pooler layer.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .textprep import EncodedInput

CHECKPOINT_FORMAT = "recam-checkpoint"
CHECKPOINT_VERSION = 1


class EncoderError(ValueError):
    pass


class EncoderModel(Protocol):
    vocab_size: int
    dim: int
    max_positions: int

    def pooled(self, ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor: ...

    def encode(self, inp: EncodedInput) -> np.ndarray: ...

    def mlm_distribution(self, inp: EncodedInput) -> np.ndarray: ...

    def token_embedding(self, token_id: int) -> np.ndarray: ...


@dataclass(frozen=True)
class ReferenceEncoderConfig:
    vocab_size: int
    layers: int = 2
    heads: int = 4
    dim: int = 64
    ffn_dim: int = 256
    max_positions: int = 256
    dropout: float = 0.0
    seed: int = 0
    mask_id: Optional[int] = None

    def __post_init__(self):
        for name in ("vocab_size", "layers", "heads", "dim", "ffn_dim", "max_positions"):
            if getattr(self, name) <= 0:
                raise EncoderError(f"{name} must be positive")
        if self.dim % self.heads:
            raise EncoderError(f"dim={self.dim} not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise EncoderError("dropout must be in [0, 1)")


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad id sequences; returns ``(ids, attention_mask)``."""
    width = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), width), pad_id, dtype=torch.long)
    mask = torch.zeros((len(seqs), width), dtype=torch.bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
        mask[i, : len(s)] = True
    return ids, mask


class _Block(nn.Module):
    def __init__(self, cfg: ReferenceEncoderConfig):
        super().__init__()
        self.heads = cfg.heads
        self.ln1 = nn.LayerNorm(cfg.dim)
        self.qkv = nn.Linear(cfg.dim, 3 * cfg.dim)
        self.proj = nn.Linear(cfg.dim, cfg.dim)
        self.ln2 = nn.LayerNorm(cfg.dim)
        self.ff1 = nn.Linear(cfg.dim, cfg.ffn_dim)
        self.ff2 = nn.Linear(cfg.ffn_dim, cfg.dim)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, mask):
        b, n, d = x.shape
        h = self.heads
        q, k, v = self.qkv(self.ln1(x)).split(d, dim=-1)
        q, k, v = (t.view(b, n, h, d // h).transpose(1, 2) for t in (q, k, v))
        att = (q @ k.transpose(-2, -1)) / math.sqrt(d // h)
        att = att.masked_fill(~mask[:, None, None, :], float("-inf"))
        att = self.drop(torch.softmax(att, dim=-1))
        y = (att @ v).transpose(1, 2).reshape(b, n, d)
        x = x + self.drop(self.proj(y))
        return x + self.drop(self.ff2(F.gelu(self.ff1(self.ln2(x)))))


class ReferenceEncoder(nn.Module):
    """Token + position embeddings, pre-norm blocks, final LayerNorm.

    The MLM head is a bias over the vocabulary on top of logits tied to the
    token embedding matrix.
    """

    def __init__(self, config: ReferenceEncoderConfig):
        super().__init__()
        self.config = config
        self.vocab_size = config.vocab_size
        self.dim = config.dim
        self.max_positions = config.max_positions
        self.tok = nn.Embedding(config.vocab_size, config.dim)
        self.pos = nn.Embedding(config.max_positions, config.dim)
        self.blocks = nn.ModuleList(_Block(config) for _ in range(config.layers))
        self.ln_f = nn.LayerNorm(config.dim)
        self.mlm_bias = nn.Parameter(torch.zeros(config.vocab_size))
        self.reset_parameters()

    def reset_parameters(self):
        g = torch.Generator().manual_seed(self.config.seed)
        for name, p in self.named_parameters():
            if name.endswith("mlm_bias") or name.endswith(".bias"):
                nn.init.zeros_(p)
            elif ".ln" in name or name.startswith("ln_"):
                nn.init.ones_(p)
            else:
                nn.init.normal_(p, std=0.02, generator=g)

    def hidden(self, ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        if ids.shape[1] > self.max_positions:
            raise EncoderError(f"input length {ids.shape[1]} exceeds max_positions={self.max_positions}")
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.vocab_size):
            raise EncoderError(f"token id outside vocabulary of size {self.vocab_size}")
        pos = torch.arange(ids.shape[1])
        x = self.tok(ids) + self.pos(pos)[None]
        for block in self.blocks:
            x = block(x, attention_mask)
        return self.ln_f(x)

    def pooled(self, ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        return self.hidden(ids, attention_mask)[:, 0]

    def mlm_logits(self, ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        return self.hidden(ids, attention_mask) @ self.tok.weight.T + self.mlm_bias

    # single-input helpers; always run with stochastic layers off
    def _single(self, inp: EncodedInput) -> tuple[torch.Tensor, torch.Tensor]:
        ids, mask = pad_batch([inp.token_ids], pad_id=0)
        return ids, mask

    @torch.no_grad()
    def encode(self, inp: EncodedInput) -> np.ndarray:
        was_training = self.training
        self.eval()
        try:
            out = self.pooled(*self._single(inp))[0]
        finally:
            self.train(was_training)
        return out.double().numpy()

    @torch.no_grad()
    def mlm_distribution(self, inp: EncodedInput) -> np.ndarray:
        pos = inp.mask_position
        if pos is None:
            raise EncoderError("probe input has no mask position")
        if not 0 <= pos < len(inp.token_ids):
            raise EncoderError(f"mask position {pos} outside input of length {len(inp.token_ids)}")
        if self.config.mask_id is not None:
            check_mask(inp, self.config.mask_id)
        was_training = self.training
        self.eval()
        try:
            logits = self.mlm_logits(*self._single(inp))[0, pos].double()
        finally:
            self.train(was_training)
        return torch.softmax(logits, dim=-1).numpy()

    @torch.no_grad()
    def token_embedding(self, token_id: int) -> np.ndarray:
        if not 0 <= token_id < self.vocab_size:
            raise EncoderError(f"token id {token_id} outside vocabulary of size {self.vocab_size}")
        return self.tok.weight[token_id].double().numpy().copy()


def check_mask(inp: EncodedInput, mask_id: int) -> None:
    """Raise unless ``inp.mask_position`` points at ``mask_id``."""
    if inp.mask_position is None:
        raise EncoderError("probe input has no mask position")
    if inp.token_ids[inp.mask_position] != mask_id:
        raise EncoderError(f"mask position {inp.mask_position} does not hold the mask token")


class ScoringHead(nn.Module):
    """Dense layer mapping a pooled vector to one logit."""

    def __init__(self, dim: int, seed: int = 0):
        super().__init__()
        self.dense = nn.Linear(dim, 1)
        g = torch.Generator().manual_seed(seed + 1)
        nn.init.normal_(self.dense.weight, std=0.02, generator=g)
        nn.init.zeros_(self.dense.bias)

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.dense(pooled).squeeze(-1)


def save_checkpoint(
    path: str | Path,
    encoder: ReferenceEncoder,
    head: Optional[ScoringHead],
    tokenizer,
    extra: Optional[dict] = None,
) -> None:
    """Write config, tokenizer, fingerprint and parameters into one file."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "encoder_config": asdict(encoder.config),
        "dtype": str(next(encoder.parameters()).dtype).replace("torch.", ""),
        "tokenizer": tokenizer.to_dict(),
        "tokenizer_fingerprint": tokenizer.fingerprint(),
        "encoder_state": {k: v.detach().clone() for k, v in encoder.state_dict().items()},
        "head_state": None if head is None else {k: v.detach().clone() for k, v in head.state_dict().items()},
        "extra": extra or {},
    }
    torch.save(payload, Path(path))


def load_checkpoint(path: str | Path):
    """Return ``(encoder, head_or_None, tokenizer, extra)``."""
    from .tokenization import tokenizer_from_dict

    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises several unrelated types here
        raise EncoderError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise EncoderError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise EncoderError(f"unsupported checkpoint version {payload.get('version')}")
    tokenizer = tokenizer_from_dict(payload["tokenizer"])
    if tokenizer.fingerprint() != payload["tokenizer_fingerprint"]:
        raise EncoderError("tokenizer fingerprint mismatch")
    dtype = getattr(torch, payload.get("dtype", "float32"))
    encoder = ReferenceEncoder(ReferenceEncoderConfig(**payload["encoder_config"])).to(dtype)
    encoder.load_state_dict(payload["encoder_state"])
    head = None
    if payload["head_state"] is not None:
        head = ScoringHead(encoder.dim).to(dtype)
        head.load_state_dict(payload["head_state"])
    return encoder, head, tokenizer, payload.get("extra", {})


def reference_encoder_for(tokenizer, **overrides) -> ReferenceEncoder:
    """Reference encoder sized to ``tokenizer``'s vocabulary."""
    cfg = ReferenceEncoderConfig(vocab_size=tokenizer.vocab_size, mask_id=tokenizer.mask_id, **overrides)
    return ReferenceEncoder(cfg)
