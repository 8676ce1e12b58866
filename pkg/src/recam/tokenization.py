"""Tokenizers: a whitespace reference tokenizer and a byte-level BPE tokenizer.

Both recognise their special-token surface forms (e.g. ``[MASK]`` or
``<mask>``) inside raw text, so masked questions round-trip through
``tokenize``.
"""

from __future__ import annotations

import hashlib
import json
from abc import ABC, abstractmethod
from collections import Counter
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional, Sequence

import regex

from ._kernels import MergeTable


class TokenizerError(ValueError):
    pass


class Tokenizer(ABC):
    """Common surface: special ids, tokenize/detokenize, id lookups."""

    cls_token: str
    sep_token: str
    mask_token: str
    pad_token: str
    unk_token: Optional[str]

    @property
    @abstractmethod
    def vocab_size(self) -> int: ...

    @abstractmethod
    def token_to_id(self, token: str) -> int: ...

    @abstractmethod
    def id_to_token(self, token_id: int) -> str: ...

    @abstractmethod
    def _tokenize_plain(self, text: str) -> list[int]: ...

    @abstractmethod
    def detokenize(self, ids: Sequence[int]) -> str: ...

    @abstractmethod
    def to_dict(self) -> dict: ...

    def _init_specials(self):
        names = [self.cls_token, self.sep_token, self.mask_token, self.pad_token]
        if self.unk_token is not None:
            names.append(self.unk_token)
        ids = []
        for tok in names:
            try:
                ids.append(self.token_to_id(tok))
            except KeyError:
                raise TokenizerError(f"special token {tok!r} missing from vocabulary") from None
        if len(set(ids)) != len(ids):
            raise TokenizerError("special-token ids must be distinct")
        self.cls_id, self.sep_id, self.mask_id, self.pad_id = ids[:4]
        self.unk_id = ids[4] if self.unk_token is not None else None
        self.special_ids = frozenset(ids)
        self._special_names = frozenset(names)
        self._special_re = regex.compile(
            "(" + "|".join(regex.escape(t) for t in sorted(names, key=len, reverse=True)) + ")"
        )

    def tokenize(self, text: str) -> list[int]:
        ids: list[int] = []
        pieces = self._special_re.split(text)
        for k, piece in enumerate(pieces):
            if piece in self._special_names:
                ids.append(self.token_to_id(piece))
                continue
            # a special token absorbs the whitespace in front of it
            if k + 1 < len(pieces) and pieces[k + 1] in self._special_names:
                piece = piece.rstrip()
            if piece:
                ids.extend(self._tokenize_plain(piece))
        return ids

    def candidate_ids(self, word: str) -> list[int]:
        """Token ids of ``word`` as it appears mid-sentence."""
        return self.tokenize(word)

    def surface(self, token_id: int) -> str:
        """Detokenized form of a single token, for word-level comparisons."""
        return self.detokenize([token_id])

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


class WhitespaceTokenizer(Tokenizer):
    """Splits on whitespace; one id per word.

    Normalization: runs of whitespace collapse to one space and words outside
    the vocabulary map to ``[UNK]``.
    """

    cls_token = "[CLS]"
    sep_token = "[SEP]"
    mask_token = "[MASK]"
    pad_token = "[PAD]"
    unk_token = "[UNK]"
    SPECIALS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")

    def __init__(self, vocab: Sequence[str]):
        vocab = list(vocab)
        if len(set(vocab)) != len(vocab):
            raise TokenizerError("vocabulary entries must be unique")
        self._itos = vocab
        self._stoi = {tok: i for i, tok in enumerate(vocab)}
        self._init_specials()

    @classmethod
    def from_texts(cls, texts: Iterable[str], min_freq: int = 1) -> "WhitespaceTokenizer":
        """Build a vocabulary ordered by descending frequency, then alphabetically."""
        counts = Counter()
        for text in texts:
            counts.update(w for w in text.split() if w not in cls.SPECIALS)
        words = sorted((w for w, c in counts.items() if c >= min_freq), key=lambda w: (-counts[w], w))
        return cls(list(cls.SPECIALS) + words)

    @property
    def vocab_size(self) -> int:
        return len(self._itos)

    def token_to_id(self, token: str) -> int:
        return self._stoi[token]

    def id_to_token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._itos):
            raise TokenizerError(f"token id {token_id} outside vocabulary of size {len(self._itos)}")
        return self._itos[token_id]

    def _tokenize_plain(self, text: str) -> list[int]:
        unk = self.unk_id
        return [self._stoi.get(w, unk) for w in text.split()]

    def detokenize(self, ids: Sequence[int]) -> str:
        return " ".join(self.id_to_token(int(i)) for i in ids)

    def to_dict(self) -> dict:
        return {"kind": "whitespace", "vocab": list(self._itos)}


@lru_cache(maxsize=1)
def bytes_to_unicode() -> dict[int, str]:
    """Reversible byte -> printable unicode map used by byte-level BPE."""
    bs = list(range(ord("!"), ord("~") + 1)) + list(range(ord("¡"), ord("¬") + 1)) + list(range(ord("®"), ord("ÿ") + 1))
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, (chr(c) for c in cs)))


PRETOKENIZE = regex.compile(r"""'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+""")


class ByteLevelBPETokenizer(Tokenizer):
    """Byte-level BPE driven by a ranked merge list and a token-to-id map.

    ``merges`` are ``(left, right)`` string pairs in rank order, as found in
    ``merges.txt``; ``vocab`` is the mapping stored in ``vocab.json``.
    """

    def __init__(
        self,
        vocab: dict[str, int],
        merges: Sequence[tuple[str, str]],
        cls_token: str = "<s>",
        sep_token: str = "</s>",
        mask_token: str = "<mask>",
        pad_token: str = "<pad>",
        unk_token: Optional[str] = "<unk>",
    ):
        self.cls_token, self.sep_token, self.mask_token = cls_token, sep_token, mask_token
        self.pad_token, self.unk_token = pad_token, unk_token
        self._stoi = dict(vocab)
        size = max(self._stoi.values(), default=-1) + 1
        itos: list[Optional[str]] = [None] * size
        for tok, i in self._stoi.items():
            if i < 0 or itos[i] is not None:
                raise TokenizerError(f"vocab id {i} is negative or assigned twice")
            itos[i] = tok
        if any(t is None for t in itos):
            raise TokenizerError("vocab ids must be contiguous from 0")
        self._itos: list[str] = itos  # type: ignore[assignment]
        self._merges = [tuple(m) for m in merges]
        self._byte_map = bytes_to_unicode()
        self._byte_unmap = {c: b for b, c in self._byte_map.items()}

        # symbol ids: 0..255 are the byte characters, merges append new symbols
        symbols = [self._byte_map[b] for b in range(256)]
        sym_id = {s: i for i, s in enumerate(symbols)}
        left, right, merged = [], [], []
        for a, b in self._merges:
            for s in (a, b, a + b):
                if s not in sym_id:
                    sym_id[s] = len(symbols)
                    symbols.append(s)
            left.append(sym_id[a])
            right.append(sym_id[b])
            merged.append(sym_id[a + b])
        self._symbols = symbols
        self._sym_id = sym_id
        self._table = MergeTable(left, right, merged)
        self._cache: dict[str, tuple[int, ...]] = {}
        self._init_specials()

    @classmethod
    def from_files(cls, vocab_path: str | Path, merges_path: str | Path, **specials) -> "ByteLevelBPETokenizer":
        vocab = json.loads(Path(vocab_path).read_text(encoding="utf-8"))
        merges = []
        for line in Path(merges_path).read_text(encoding="utf-8").splitlines():
            if not line.strip() or line.startswith("#version"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise TokenizerError(f"malformed merge line: {line!r}")
            merges.append((parts[0], parts[1]))
        return cls(vocab, merges, **specials)

    @property
    def vocab_size(self) -> int:
        return len(self._itos)

    def token_to_id(self, token: str) -> int:
        return self._stoi[token]

    def id_to_token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._itos):
            raise TokenizerError(f"token id {token_id} outside vocabulary of size {len(self._itos)}")
        return self._itos[token_id]

    def bpe(self, piece: str) -> list[str]:
        """Merge the byte symbols of one pre-tokenized piece."""
        encoded = "".join(self._byte_map[b] for b in piece.encode("utf-8"))
        out = self._table.apply([self._sym_id[c] for c in encoded])
        return [self._symbols[s] for s in out]

    def _piece_ids(self, piece: str) -> tuple[int, ...]:
        hit = self._cache.get(piece)
        if hit is not None:
            return hit
        ids = []
        for sym in self.bpe(piece):
            i = self._stoi.get(sym)
            if i is None:
                if self.unk_id is None:
                    raise TokenizerError(f"symbol {sym!r} not in vocabulary and no unk token")
                i = self.unk_id
            ids.append(i)
        out = tuple(ids)
        if len(self._cache) < 200_000:
            self._cache[piece] = out
        return out

    def _tokenize_plain(self, text: str) -> list[int]:
        ids: list[int] = []
        for piece in PRETOKENIZE.findall(text):
            ids.extend(self._piece_ids(piece))
        return ids

    def candidate_ids(self, word: str) -> list[int]:
        return self.tokenize(" " + word.strip())

    def detokenize(self, ids: Sequence[int]) -> str:
        out = bytearray()
        for i in ids:
            tok = self.id_to_token(int(i))
            if int(i) in self.special_ids:
                out.extend(tok.encode("utf-8"))
            else:
                out.extend(self._byte_unmap.get(c, ord("?")) for c in tok)
        return out.decode("utf-8", errors="replace")

    def to_dict(self) -> dict:
        return {
            "kind": "bpe",
            "vocab": self._stoi,
            "merges": [list(m) for m in self._merges],
            "specials": {
                "cls_token": self.cls_token,
                "sep_token": self.sep_token,
                "mask_token": self.mask_token,
                "pad_token": self.pad_token,
                "unk_token": self.unk_token,
            },
        }


def tokenizer_from_dict(data: dict) -> Tokenizer:
    kind = data.get("kind")
    if kind == "whitespace":
        return WhitespaceTokenizer(data["vocab"])
    if kind == "bpe":
        return ByteLevelBPETokenizer(data["vocab"], [tuple(m) for m in data["merges"]], **data["specials"])
    raise TokenizerError(f"unknown tokenizer kind {kind!r}")


def normalize_surface(text: str) -> str:
    """Comparison form for words: BPE space marker removed, stripped, lowercased."""
    return text.replace("Ġ", " ").strip().lower()
