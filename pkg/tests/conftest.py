import json
from collections import Counter

import numpy as np
import pytest
import torch

from recam.corpus import Instance
from recam.tokenization import ByteLevelBPETokenizer, WhitespaceTokenizer, bytes_to_unicode

torch.set_num_threads(1)

TABLE1_PASSAGE = (
    "Briton Davies won F42 shot put gold with a Games record at Rio 2016, but was unable to defend "
    "his 2012 discus title as it did not feature in Brazil. \"I don't normally say what I'm going for,\" "
    "said the Welshman, 25."
)
TABLE1_QUESTION = (
    "Paralympic champion Aled Sion Davies @placeholder two gold medals at the 2017 World Para "
    "Athletics Championships in London."
)
TABLE1_OPTIONS = ("suffered", "promoted", "remains", "wants", "achieved")


@pytest.fixture
def table1_instance():
    return Instance("t1", TABLE1_PASSAGE, TABLE1_QUESTION, TABLE1_OPTIONS, 3)


def whitespace_for(*splits_or_texts):
    texts = []
    for item in splits_or_texts:
        if isinstance(item, str):
            texts.append(item)
        else:
            for inst in item:
                texts.extend([inst.passage, inst.question, *inst.candidates])
    return WhitespaceTokenizer.from_texts(texts)


class ScriptedMLM:
    """Masked-LM stand-in returning a distribution chosen by a callback."""

    max_positions = 256
    model_id = "scripted"

    def __init__(self, tokenizer, script, embeddings=None):
        self.tokenizer = tokenizer
        self.script = script
        self.calls = []
        self._emb = embeddings

    def mlm_distribution(self, inp):
        self.calls.append(inp)
        p = np.asarray(self.script(inp), dtype=np.float64)
        return p / p.sum()

    def token_embedding(self, token_id):
        if self._emb is None:
            raise AssertionError("no embeddings scripted")
        return np.asarray(self._emb[token_id], dtype=np.float64)


def peaked(tokenizer, weights: dict, rest: float = 1e-6):
    """Distribution with given mass on named words and ``rest`` elsewhere."""
    p = np.full(tokenizer.vocab_size, rest)
    for word, w in weights.items():
        p[tokenizer.token_to_id(word)] = w
    return p


def learn_bpe(corpus, n_merges):
    """Tiny BPE learner for test fixtures (not part of the package)."""
    bmap = bytes_to_unicode()
    from recam.tokenization import PRETOKENIZE

    words = Counter()
    for text in corpus:
        for piece in PRETOKENIZE.findall(text):
            words[tuple(bmap[b] for b in piece.encode("utf-8"))] += 1
    merges = []
    for _ in range(n_merges):
        pairs = Counter()
        for w, c in words.items():
            for a, b in zip(w, w[1:]):
                pairs[(a, b)] += c
        if not pairs:
            break
        best = min(pairs, key=lambda p: (-pairs[p], p))
        merges.append(best)
        new = Counter()
        for w, c in words.items():
            out, i = [], 0
            while i < len(w):
                if i < len(w) - 1 and (w[i], w[i + 1]) == best:
                    out.append(w[i] + w[i + 1])
                    i += 2
                else:
                    out.append(w[i])
                    i += 1
            new[tuple(out)] += c
        words = new
    vocab = ["<s>", "<pad>", "</s>", "<unk>"]
    vocab += [bmap[b] for b in range(256)]
    for a, b in merges:
        if a + b not in vocab:
            vocab.append(a + b)
    vocab.append("<mask>")
    return {tok: i for i, tok in enumerate(vocab)}, merges


BPE_CORPUS = [
    TABLE1_PASSAGE,
    TABLE1_QUESTION,
    "The Aurora Borealis, better known as the Northern Lights, was spotted across parts of England on Sunday.",
    "The BBC is providing live coverage of the Scottish National Party conference in Glasgow.",
    "Rickets does not have the ring of a 21st Century problem - it sounds more like the horror of a bygone era.",
]


@pytest.fixture(scope="session")
def bpe_files(tmp_path_factory):
    vocab, merges = learn_bpe(BPE_CORPUS, 120)
    d = tmp_path_factory.mktemp("bpe")
    (d / "vocab.json").write_text(json.dumps(vocab), encoding="utf-8")
    (d / "merges.txt").write_text(
        "#version: 0.2\n" + "".join(f"{a} {b}\n" for a, b in merges), encoding="utf-8"
    )
    return d / "vocab.json", d / "merges.txt"


@pytest.fixture(scope="session")
def bpe_tokenizer(bpe_files):
    return ByteLevelBPETokenizer.from_files(*bpe_files)


# ---------------------------------------------------------------- acceptance summary

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when in ("setup", "call"):
        name = report.nodeid.split("::")[-1]
        if report.when == "setup" and report.outcome == "passed":
            return
        outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _ACCEPTANCE[name] = outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{_ACCEPTANCE[name]:<5}{name}")
