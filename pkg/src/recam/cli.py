"""Command-line front end.

Every command that writes files also writes ``<output>.manifest.json`` with
the resolved config, seed, input digests and output paths.

Config files are flat ``key = value`` text (``#`` starts a comment). Keys:
TrainConfig fields (lr, epochs, micro_batch_size, accumulation_steps, max_len,
stride, epsilon, seed, weight_decay, keep_best, early_stop_accuracy), an
optional ``preset`` (roberta, albert, deberta, reference), reference encoder
fields (layers, heads, dim, ffn_dim, max_positions, dropout), and
``k``, ``similarity``, ``mask_rate``, ``tapt_epochs``, ``tapt_lr``. The
environment variable ``RECAM_CONFIG`` names a default config file; ``--set
key=value`` and dedicated flags override file values.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from . import __version__
from .corpus import CorpusError, DatasetSplit, ingest, load_jsonl, split_stats, write_jsonl
from .encoder import EncoderError, ReferenceEncoderConfig, ScoringHead, load_checkpoint, reference_encoder_for, save_checkpoint
from .ensemble_eval import (
    DEFAULT_EDGES,
    EvaluationError,
    accuracy,
    ensemble,
    error_report,
    format_error_case,
    length_buckets,
)
from .mcscorer import PRESETS, TrainConfig, TrainingError, predict, train
from .predictions import PredictionError, read_predictions, write_predictions
from .probe import ProbeError, augment_split, zero_shot_rank
from .tapt import TaptError, gen_in_domain_mlm, gen_nsp_pairs, gen_within_task, pretrain_mlm
from .textprep import InputError
from .tokenization import ByteLevelBPETokenizer, TokenizerError, WhitespaceTokenizer

logger = logging.getLogger("recam")

CONFIG_ENV = "RECAM_CONFIG"
EXIT_USAGE, EXIT_DATA, EXIT_MODEL, EXIT_OTHER = 2, 3, 4, 1
DATA_ERRORS = (CorpusError, InputError, PredictionError, EvaluationError, TokenizerError, ProbeError, TaptError)
MODEL_ERRORS = (EncoderError, TrainingError)

ENCODER_KEYS = ("layers", "heads", "dim", "ffn_dim", "max_positions", "dropout")
TRAIN_KEYS = tuple(TrainConfig.__dataclass_fields__)
EXTRA_KEYS = ("preset", "k", "similarity", "mask_rate", "tapt_epochs", "tapt_lr")
DEFAULTS = {"k": 1, "similarity": "mask-likelihood", "mask_rate": 0.15, "tapt_epochs": 0, "tapt_lr": 1e-3, "seed": 0}


class UsageError(ValueError):
    pass


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = _coerce(key, value)
    return out


def _coerce(key: str, value: str):
    known = set(ENCODER_KEYS) | set(TRAIN_KEYS) | set(EXTRA_KEYS)
    if key not in known:
        raise UsageError(f"unknown config key {key!r}")
    if value.lower() in ("none", ""):
        return None
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    if key == "betas":
        return tuple(float(v) for v in value.replace(",", " ").split())
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if path:
        cfg.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg[key.strip()] = _coerce(key.strip(), value.strip())
    for key in ("seed", "epochs", "lr", "max_len", "k", "similarity", "accumulation_steps", "epsilon"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if cfg.get("preset"):
        if cfg["preset"] not in PRESETS:
            raise UsageError(f"unknown preset {cfg['preset']!r}")
        for key, value in PRESETS[cfg["preset"]].items():
            cfg.setdefault(key, value)
    return cfg


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(**{k: v for k, v in cfg.items() if k in TRAIN_KEYS and v is not None})


def digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(output: str | Path, command: str, cfg: dict, inputs: list, outputs: list, started: str) -> Path:
    manifest = {
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "inputs": {str(p): digest(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "started": started,
        "finished": _now(),
        "version": __version__,
    }
    path = Path(str(output) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _load(path: str, task: str = "synthetic", name: Optional[str] = None) -> DatasetSplit:
    try:
        return load_jsonl(path, task_tag=task, name=name)
    except CorpusError as exc:
        if name is None and "cannot infer split name" in str(exc):
            return load_jsonl(path, task_tag=task, name="test")
        raise


def _tokenizer_from_args(args, texts):
    if getattr(args, "vocab", None) and getattr(args, "merges", None):
        return ByteLevelBPETokenizer.from_files(args.vocab, args.merges)
    if getattr(args, "model", None):
        return load_checkpoint(args.model)[2]
    return WhitespaceTokenizer.from_texts(texts)


# ---------------------------------------------------------------- commands


def cmd_ingest(args, cfg, started):
    split, report = ingest(args.data, task_tag=args.task, name=args.split)
    tokenizer = _tokenizer_from_args(args, [i.passage for i in split] + [i.question for i in split])
    result = {"split": split.name, "task": split.task_tag, "validation": report.to_dict()}
    if split.instances:
        stats = split_stats(split, tokenizer)
        result.update(
            count=stats.count,
            avg_passage_token_length=stats.avg_passage_token_length,
            avg_passage_word_length=stats.avg_passage_word_length,
        )
    else:
        result["count"] = 0
    print(json.dumps(result, indent=2))
    if args.out:
        write_jsonl(split, args.out)
        write_manifest(args.out, "ingest", cfg, [args.data], [args.out], started)
    return 0


def _build_model(args, cfg, splits):
    texts = [t for s in splits for i in s for t in (i.passage, i.question, *i.candidates)]
    tokenizer = _tokenizer_from_args(argparse.Namespace(vocab=args.vocab, merges=args.merges, model=None), texts)
    enc_kwargs = {k: cfg[k] for k in ENCODER_KEYS if cfg.get(k) is not None}
    enc_kwargs.setdefault("max_positions", max(cfg.get("max_len") or 256, 8))
    encoder = reference_encoder_for(tokenizer, seed=cfg["seed"], **enc_kwargs)
    return tokenizer, encoder


def cmd_init_model(args, cfg, started):
    splits = [_load(p, name="train") for p in args.data]
    tokenizer, encoder = _build_model(args, cfg, splits)
    inputs = list(args.data)
    docs = [i.passage for s in splits for i in s]
    if args.docs:
        docs = [line for line in Path(args.docs).read_text(encoding="utf-8").splitlines() if line.strip()]
        inputs.append(args.docs)
    if cfg["tapt_epochs"]:
        examples = gen_in_domain_mlm(docs, tokenizer, cfg["mask_rate"], cfg["seed"], max_len=encoder.max_positions)
        history = pretrain_mlm(encoder, examples, tokenizer, epochs=cfg["tapt_epochs"], lr=cfg["tapt_lr"], seed=cfg["seed"])
        print(json.dumps({"tapt_mlm_loss": history}))
    save_checkpoint(args.out, encoder, None, tokenizer, extra={"config": cfg})
    write_manifest(args.out, "init-model", cfg, inputs, [args.out], started)
    print(f"wrote {args.out} (vocab {tokenizer.vocab_size})")
    return 0


def cmd_probe(args, cfg, started):
    split = _load(args.data)
    encoder, _, tokenizer, _ = load_checkpoint(args.model)
    rows, correct = [], 0
    for inst in split:
        ranked = zero_shot_rank(inst, encoder, tokenizer, cfg["similarity"])
        rows.append({"id": inst.id, "ranking": ranked.order, "scores": [float(s) for s in ranked.scores]})
        if inst.gold_index is not None:
            correct += ranked.order[0] == inst.gold_index
    if split.labeled and split.instances:
        print(f"zero-shot accuracy ({cfg['similarity']}): {correct / len(split):.4f}")
    if args.out:
        Path(args.out).write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
        write_manifest(args.out, "probe", cfg, [args.data, args.model], [args.out], started)
    return 0


def cmd_augment(args, cfg, started):
    split = _load(args.data)
    encoder, _, tokenizer, _ = load_checkpoint(args.model)
    augmented = augment_split(split, encoder, tokenizer, k=cfg["k"])
    write_jsonl(augmented, args.out)
    skipped = sum(bool(i.nal_meta["skipped"]) for i in augmented)
    print(f"augmented {len(augmented)} instances ({skipped} gold skips) -> {args.out}")
    write_manifest(args.out, "augment", cfg, [args.data, args.model], [args.out], started)
    return 0


def cmd_tapt_gen(args, cfg, started):
    inputs = [args.data]
    out, sidecar = Path(args.out), Path(str(args.out) + ".labels")
    if args.mode == "within-task":
        split = _load(args.data)
        tokenizer = _tokenizer_from_args(args, [i.passage for i in split])
        seqs = gen_within_task(split, tokenizer, cfg.get("max_len") or 256)
        out.write_text("".join(" ".join(map(str, s)) + "\n" for s in seqs), encoding="utf-8")
        outputs = [out]
    else:
        if args.data.endswith(".jsonl"):
            docs = [i.passage for i in _load(args.data)]
        else:
            docs = [line for line in Path(args.data).read_text(encoding="utf-8").splitlines() if line.strip()]
        tokenizer = _tokenizer_from_args(args, docs)
        if args.mode == "in-domain":
            examples = gen_in_domain_mlm(docs, tokenizer, cfg["mask_rate"], cfg["seed"], max_len=cfg.get("max_len") or 256)
            out.write_text("".join(" ".join(map(str, e.token_ids)) + "\n" for e in examples), encoding="utf-8")
            sidecar.write_text(
                "".join(" ".join(f"{p}:{lab}" for p, lab in zip(e.positions, e.labels)) + "\n" for e in examples),
                encoding="utf-8",
            )
        else:
            pairs = gen_nsp_pairs(docs, tokenizer, cfg["seed"], all_true=args.all_true)
            sep = tokenizer.sep_id
            out.write_text("".join(" ".join(map(str, (*p.a, sep, *p.b))) + "\n" for p in pairs), encoding="utf-8")
            sidecar.write_text("".join(f"{int(p.is_next)}\n" for p in pairs), encoding="utf-8")
        outputs = [out, sidecar]
    if args.model:
        inputs.append(args.model)
    write_manifest(out, "tapt-gen", cfg, inputs, outputs, started)
    print(f"wrote {', '.join(map(str, outputs))}")
    return 0


def cmd_train(args, cfg, started):
    train_split = _load(args.train, name="train")
    dev_split = _load(args.dev, name="dev") if args.dev else None
    inputs = [args.train] + ([args.dev] if args.dev else [])
    if args.model:
        encoder, head, tokenizer, _ = load_checkpoint(args.model)
        inputs.append(args.model)
    else:
        ns = argparse.Namespace(vocab=args.vocab, merges=args.merges)
        tokenizer, encoder = _build_model(ns, cfg, [train_split] + ([dev_split] if dev_split else []))
        head = None
    if head is None:
        head = ScoringHead(encoder.dim, seed=cfg["seed"]).to(next(encoder.parameters()).dtype)
    tc = train_config(cfg)
    result = train(train_split, dev_split, encoder, head, tokenizer, tc)
    save_checkpoint(args.out, encoder, head, tokenizer, extra={"train_config": tc.to_dict()})
    history_path = Path(str(args.out) + ".history.jsonl")
    history_path.write_text(
        "".join(json.dumps(vars(r)) + "\n" for r in result.history), encoding="utf-8"
    )
    print(json.dumps({"best_epoch": result.best_epoch, "best_dev_accuracy": result.best_dev_accuracy}))
    write_manifest(args.out, "train", {**cfg, "resolved_train_config": tc.to_dict()}, inputs, [args.out, history_path], started)
    return 0


def cmd_predict(args, cfg, started):
    split = _load(args.data)
    encoder, head, tokenizer, extra = load_checkpoint(args.model)
    if head is None:
        raise EncoderError(f"{args.model} has no scoring head; train it first")
    tc = extra.get("train_config", {})
    max_len = cfg.get("max_len") or tc.get("max_len") or 256
    stride = cfg.get("stride") or tc.get("stride")
    preds = predict(split, encoder, head, tokenizer, max_len, stride, model_id=Path(args.model).stem)
    write_predictions(preds, args.out)
    print(f"wrote {len(preds)} predictions -> {args.out}")
    if split.labeled and split.instances:
        print(f"accuracy: {accuracy(preds, split):.4f}")
    write_manifest(args.out, "predict", cfg, [args.data, args.model], [args.out], started)
    return 0


def cmd_ensemble(args, cfg, started):
    members = [read_predictions(p) for p in args.pred]
    write_predictions(ensemble(members), args.out)
    print(f"ensembled {len(members)} members -> {args.out}")
    write_manifest(args.out, "ensemble", cfg, list(args.pred), [args.out], started)
    return 0


def cmd_evaluate(args, cfg, started):
    preds = read_predictions(args.pred)
    split = _load(args.data)
    acc = accuracy(preds, split)
    print(f"{acc:.4f}" if not args.json else json.dumps({"accuracy": acc, "count": len(split)}))
    return 0


def cmd_analyze_length(args, cfg, started):
    preds = read_predictions(args.pred)
    split = _load(args.data)
    tokenizer = _tokenizer_from_args(args, [i.passage for i in split])
    edges = DEFAULT_EDGES if args.edges is None else tuple(int(e) for e in args.edges.split(",") if e.strip())
    report = length_buckets(preds, split, tokenizer, edges)
    print(report.table())
    outputs = []
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
        outputs.append(args.out)
    if args.csv:
        Path(args.csv).write_text(report.csv(), encoding="utf-8")
        outputs.append(args.csv)
    if outputs:
        write_manifest(outputs[0], "analyze-length", cfg, [args.pred, args.data], outputs, started)
    return 0


def cmd_report_errors(args, cfg, started):
    preds = read_predictions(args.pred)
    split = _load(args.data)
    augmentation = None
    if args.augmented:
        augmentation = {i.id: i.nal_meta for i in _load(args.augmented) if i.nal_meta}
    cases = error_report(preds, split, augmentation)
    for case in cases[: args.limit] if args.limit else cases:
        print(format_error_case(case))
        print()
    print(f"{len(cases)} wrong predictions out of {len(split)}")
    if args.out:
        Path(args.out).write_text(json.dumps([c.to_dict() for c in cases], indent=2) + "\n", encoding="utf-8")
        write_manifest(args.out, "report-errors", cfg, [args.pred, args.data], [args.out], started)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recam", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--config", help=f"flat key=value config file (default: ${CONFIG_ENV})")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--seed", type=int)
        return p

    p = add("ingest", cmd_ingest, "validate a JSON-Lines split and print statistics")
    p.add_argument("--data", required=True)
    p.add_argument("--task", default="synthetic", choices=["subtask1", "subtask2", "synthetic"])
    p.add_argument("--split", choices=["train", "trial", "dev", "test"])
    p.add_argument("--model", help="checkpoint whose tokenizer counts passage tokens")
    p.add_argument("--vocab")
    p.add_argument("--merges")
    p.add_argument("--out", help="write the canonical split here")

    p = add("init-model", cmd_init_model, "build a tokenizer and reference encoder, optionally MLM-pretrain it")
    p.add_argument("--data", required=True, nargs="+")
    p.add_argument("--docs", help="plain-text in-domain documents, one per line")
    p.add_argument("--vocab")
    p.add_argument("--merges")
    p.add_argument("--out", required=True)

    p = add("probe", cmd_probe, "zero-shot masked-LM ranking of candidates")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--similarity", choices=["mask-likelihood", "embedding-cosine"])
    p.add_argument("--out")

    p = add("augment", cmd_augment, "append LM-mined negative candidates")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--out", required=True)

    p = add("tapt-gen", cmd_tapt_gen, "generate task-adaptive pretraining data")
    p.add_argument("--mode", choices=["in-domain", "within-task", "nsp"], default="in-domain")
    p.add_argument("--data", required=True, help="JSON-Lines split or plain-text documents")
    p.add_argument("--model")
    p.add_argument("--vocab")
    p.add_argument("--merges")
    p.add_argument("--all-true", action="store_true", help="nsp: only consecutive pairs")
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "fine-tune the multiple-choice scorer")
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--model", help="starting checkpoint (default: fresh reference encoder)")
    p.add_argument("--vocab")
    p.add_argument("--merges")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--accumulation-steps", dest="accumulation_steps", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--out", default="model.ckpt")

    p = add("predict", cmd_predict, "write per-instance probabilities and choices")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = add("ensemble", cmd_ensemble, "average member prediction files")
    p.add_argument("--pred", required=True, action="append")
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "accuracy of a prediction file")
    p.add_argument("--pred", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--json", action="store_true")

    p = add("analyze-length", cmd_analyze_length, "accuracy by passage length")
    p.add_argument("--pred", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--model")
    p.add_argument("--vocab")
    p.add_argument("--merges")
    p.add_argument("--edges", help="comma-separated token-count edges (default 128,256,384,512)")
    p.add_argument("--out")
    p.add_argument("--csv")

    p = add("report-errors", cmd_report_errors, "list wrong predictions, most confident first")
    p.add_argument("--pred", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--augmented", help="augmented split carrying nal_meta")
    p.add_argument("--limit", type=int)
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    started = _now()
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg, started)
    except UsageError as exc:
        print(f"recam {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"recam {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except MODEL_ERRORS as exc:
        print(f"recam {args.command}: model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (OSError, ValueError) as exc:
        print(f"recam {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
