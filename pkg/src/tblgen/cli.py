"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import asdict
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .codec import InvalidDocument, decode_sequence, encode_document
from .decoding import GenerateOptions
from .metrics import aggregate, score_documents
from .model.checkpoint import FormatVersionMismatch, load_checkpoint, save_checkpoint
from .model.checkpoint import IoFailure as CheckpointIoFailure
from .model.config import ModelConfig
from .model.transformer import Seq2Seq, ShapeMismatch
from .synth import (DatasetRecord, IoFailure, ParseError, SynthConfig, TableRecord, corpus_stats,
                    generate_corpus, load_dataset, save_dataset)
from .table import Document, HeaderMode
from .train import TrainConfig, evaluate, generate_all, make_examples, train, vocab_from_records
from .vocab import Vocab

log = logging.getLogger("tblgen")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

DEFAULTS: dict[str, Any] = {
    "d_model": 128, "n_heads": 4, "d_ff": 256, "n_enc_layers": 2, "n_dec_layers": 2, "max_len": 256,
    "dropout": 0.0, "epochs": 26, "batch_size": 16, "lr": 2e-3, "warmup_steps": 100, "clip": 1.0,
    "tre": True, "seed": 0, "time_budget": 30 * 60.0, "eval_limit": 200, "header_mode": "both",
    "constraint": True, "beam": 0, "gen_max_len": 256, "jobs": 1, "average": "table", "min_freq": 1,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits with 2; usage errors here are 1
        self.print_help(sys.stderr)
        raise UsageError(message)


def read_config(path: Optional[str]) -> dict[str, Any]:
    """``key = value`` lines; ``#`` starts a comment. Values are parsed as
    JSON when possible (numbers, true/false), else kept as strings."""
    if not path:
        return {}
    out: dict[str, Any] = {}
    for n, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(n, f"expected key = value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            out[key.replace("-", "_")] = json.loads(val)
        except json.JSONDecodeError:
            out[key.replace("-", "_")] = val
    return out


def resolve(args: argparse.Namespace, key: str) -> Any:
    """flag > config file > built-in default."""
    val = getattr(args, key, None)
    if val is not None:
        return val
    return args._config.get(key, DEFAULTS.get(key))


def _atomic_write_json(path: str | Path, obj: Any) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _model_config(args, vocab_size: int) -> ModelConfig:
    return ModelConfig(vocab_size=vocab_size, d_model=resolve(args, "d_model"), n_heads=resolve(args, "n_heads"),
                       d_ff=resolve(args, "d_ff"), n_enc_layers=resolve(args, "n_enc_layers"),
                       n_dec_layers=resolve(args, "n_dec_layers"), max_len=resolve(args, "max_len"),
                       dropout=resolve(args, "dropout"))


def _train_config(args, tre: bool, seed: int) -> TrainConfig:
    return TrainConfig(epochs=resolve(args, "epochs"), batch_size=resolve(args, "batch_size"), lr=resolve(args, "lr"),
                       warmup_steps=resolve(args, "warmup_steps"), clip=resolve(args, "clip"), tre=tre, seed=seed,
                       time_budget_s=resolve(args, "time_budget"), eval_limit=resolve(args, "eval_limit"),
                       header_mode=resolve(args, "header_mode"))


def _gen_options(args, tre: Optional[bool] = None, constraint: Optional[bool] = None) -> GenerateOptions:
    return GenerateOptions(
        constraint=resolve(args, "constraint") if constraint is None else constraint,
        tre=resolve(args, "tre") if tre is None else tre,
        beam=resolve(args, "beam"), max_len=resolve(args, "gen_max_len"),
        header_mode=HeaderMode(resolve(args, "header_mode")), seed=resolve(args, "seed"))


def _vocab_path(ckpt: str | Path) -> Path:
    return Path(str(ckpt) + ".vocab")


def _load_model(path: str) -> tuple[Seq2Seq, dict, ModelConfig, Vocab, dict]:
    p, cfg, header = load_checkpoint(path)
    if header.get("vocab"):
        vocab = Vocab(tuple(header["vocab"]))
    else:
        vocab = Vocab.load(header["vocab_path"])
    return Seq2Seq(cfg), p, cfg, vocab, header


def _doc_json(doc: Document) -> list[dict]:
    return [{"caption": t.caption, "header_mode": t.header_mode.value, "rows": [list(r) for r in t.rows]}
            for t in doc.tables]


# -- subcommands -------------------------------------------------------------

def cmd_synth(args) -> int:
    try:
        cfg = SynthConfig(n_examples=args.n, seed=resolve(args, "seed"), synonym_rate=args.synonym_rate,
                          distractor_sentence_rate=args.distractor_rate, omission_rate=args.omission_rate,
                          n_entities_range=tuple(args.entities), n_stat_types_range=tuple(args.stats))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    save_dataset(generate_corpus(cfg), args.out)
    print(f"wrote {cfg.n_examples} records to {args.out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    print(json.dumps(corpus_stats(load_dataset(args.dataset)), indent=2))
    return EXIT_OK


def cmd_encode(args) -> int:
    records = load_dataset(args.dataset)
    if args.vocab and Path(args.vocab).exists():
        vocab = Vocab.load(args.vocab)
    else:
        vocab = vocab_from_records(records, resolve(args, "min_freq"))
        if args.vocab:
            vocab.save(args.vocab)
    with open(args.out, "w", encoding="utf-8") as fh:
        for r in records:
            ids = encode_document(vocab, r.document())
            modes = [t.header_mode for t in r.tables]
            fh.write(json.dumps({"text": r.text, "tokens": [vocab.token_of(i) for i in ids],
                                 "header_modes": modes}, ensure_ascii=False) + "\n")
    return EXIT_OK


def _read_jsonl(path: str) -> list[dict]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    out = []
    for n, line in enumerate(lines, start=1):
        if line.strip():
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(n, exc.msg) from exc
    return out


def _ids_from_tokens(vocab: Vocab, tokens: Sequence[str]) -> list[int]:
    return [vocab.id_of(t) for t in tokens]


def cmd_decode(args) -> int:
    rows = _read_jsonl(args.sequences)
    vocab = Vocab.load(args.vocab)
    records = []
    bad = 0
    for n, obj in enumerate(rows, start=1):
        if "tokens" not in obj:
            raise ParseError(n, 'missing "tokens" field')
        doc, ok = decode_sequence(vocab, _ids_from_tokens(vocab, obj["tokens"]),
                                  obj.get("header_modes") or resolve(args, "header_mode"))
        bad += not ok
        records.append(DatasetRecord(obj.get("text", ""), [TableRecord([list(r) for r in t.rows],
                                                                       t.header_mode.value, t.caption)
                                                           for t in doc.tables]))
    save_dataset(records, args.out)
    if bad:
        print(f"{bad} of {len(rows)} sequences were malformed and have been repaired", file=sys.stderr)
    return EXIT_OK


def _split_train(args):
    train_recs = load_dataset(args.train)
    val_recs = load_dataset(args.valid) if args.valid else []
    vocab = vocab_from_records(train_recs + val_recs, resolve(args, "min_freq"))
    return train_recs, val_recs, vocab


def _fit(args, vocab, train_ex, val_ex, tre: bool, seed: int, out: str) -> dict:
    mcfg = _model_config(args, len(vocab))
    tcfg = _train_config(args, tre, seed)

    def on_epoch(row):
        print(f"epoch {row['epoch']} train_loss {row['train_loss']:.4f} "
              f"val_loss {row.get('val_loss', float('nan')):.4f} val_f1 {row.get('val_f1', float('nan')):.4f}",
              flush=True)

    res = train(mcfg, tcfg, vocab, train_ex, val_ex, on_epoch)
    vocab.save(_vocab_path(out))
    save_checkpoint(res.params, mcfg, out, str(_vocab_path(out)), list(vocab.tokens),
                    {"train_config": asdict(tcfg), "train_seconds": res.train_seconds, "steps": res.steps})
    return {"checkpoint": out, "model_config": mcfg.to_dict(), "train_config": asdict(tcfg),
            "history": res.history, "train_seconds": res.train_seconds}


def cmd_train(args) -> int:
    started = time.time()
    train_recs, val_recs, vocab = _split_train(args)
    train_ex = make_examples(vocab, train_recs)
    val_ex = make_examples(vocab, val_recs)
    info = _fit(args, vocab, train_ex, val_ex, resolve(args, "tre"), resolve(args, "seed"), args.out)
    if args.manifest:
        _atomic_write_json(args.manifest, {"command": "train", "seed": resolve(args, "seed"),
                                           "train": args.train, "valid": args.valid, **info,
                                           "started": started, "finished": time.time()})
    return EXIT_OK


def _options_json(args) -> dict:
    return {k: (v.value if isinstance(v, HeaderMode) else v) for k, v in asdict(_gen_options(args)).items()}


def cmd_generate(args) -> int:
    started = time.time()
    model, p, cfg, vocab, _ = _load_model(args.checkpoint)
    records = load_dataset(args.data)
    examples = make_examples(vocab, records)
    opts = _gen_options(args)
    gens = generate_all(model, p, vocab, [e.src for e in examples], opts, jobs=resolve(args, "jobs"))
    with open(args.out, "w", encoding="utf-8") as fh:
        for g in gens:
            fh.write(json.dumps({"tokens": [vocab.token_of(i) for i in g.ids], "well_formed": g.well_formed,
                                 "tables": _doc_json(g.document)}, ensure_ascii=False) + "\n")
    if args.manifest:
        _atomic_write_json(args.manifest, {"command": "generate", "checkpoint": args.checkpoint,
                                           "data": args.data, "out": args.out, "seed": resolve(args, "seed"),
                                           "options": _options_json(args),
                                           "malformed": sum(not g.well_formed for g in gens),
                                           "started": started, "finished": time.time()})
    return EXIT_OK


def _pred_document(obj: dict, n: int) -> Document:
    try:
        recs = [TableRecord(t["rows"], t.get("header_mode", "both"), t.get("caption")) for t in obj["tables"]]
    except (KeyError, TypeError) as exc:
        raise ParseError(n, f"bad prediction record: {exc}") from exc
    return DatasetRecord("", recs).document()


def cmd_evaluate(args) -> int:
    gold = load_dataset(args.gold)
    average = resolve(args, "average")
    if args.checkpoint:
        model, p, cfg, vocab, _ = _load_model(args.checkpoint)
        examples = make_examples(vocab, gold)
        gens = generate_all(model, p, vocab, [e.src for e in examples], _gen_options(args),
                            jobs=resolve(args, "jobs"))
        docs = [g.document for g in gens]
        flags = [g.well_formed for g in gens]
    elif args.pred:
        preds = _read_jsonl(args.pred)
        if len(preds) != len(gold):
            raise ParseError(len(preds), f"{len(preds)} predictions for {len(gold)} gold records")
        docs = [_pred_document(o, n) for n, o in enumerate(preds, start=1)]
        flags = [bool(o.get("well_formed", True)) for o in preds]
    else:
        raise UsageError("evaluate needs --pred or --checkpoint")
    per_doc = [score_documents(d, r.document()) for d, r in zip(docs, gold)]
    score = aggregate(per_doc, flags, average)
    result = score.as_percentages()
    print(json.dumps(result, indent=2))
    if args.manifest:
        _atomic_write_json(args.manifest, {"command": "evaluate", "gold": args.gold, "pred": args.pred,
                                           "checkpoint": args.checkpoint, "seed": resolve(args, "seed"),
                                           "options": _options_json(args),
                                           "metrics": result, "finished": time.time()})
    return EXIT_OK


def cmd_ablate(args) -> int:
    """Train with and without relation embeddings, decode each with and
    without the table constraint, report the 2x2 grid (median over seeds)."""
    started = time.time()
    train_recs, val_recs, vocab = _split_train(args)
    eval_recs = load_dataset(args.test) if args.test else val_recs
    train_ex = make_examples(vocab, train_recs)
    val_ex = make_examples(vocab, val_recs)
    eval_ex = make_examples(vocab, eval_recs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = args.seeds or [resolve(args, "seed")]
    grid: dict[tuple[bool, bool], list[dict]] = {}
    runs = []
    for tre in (False, True):
        for seed in seeds:
            ckpt = out_dir / f"model_tre{int(tre)}_seed{seed}.ckpt"
            if ckpt.exists() and not args.retrain:
                info = {"checkpoint": str(ckpt), "reused": True}
            else:
                info = _fit(args, vocab, train_ex, val_ex, tre, seed, str(ckpt))
            runs.append(info)
            model, p, _, _, _ = _load_model(str(ckpt))
            for tc in (False, True):
                opts = _gen_options(args, tre=tre, constraint=tc)
                score, _ = evaluate(model, p, vocab, eval_ex, opts, average=resolve(args, "average"))
                grid.setdefault((tc, tre), []).append({"seed": seed, "f1": score.f1, "precision": score.precision,
                                                       "recall": score.recall, "error_rate": score.error_rate})
    rows = []
    print(f"{'TC':<4}{'TRE':<5}{'Pre.':>8}{'Rec.':>8}{'F1':>8}{'Err.':>8}")
    for tc, tre in ((False, False), (True, False), (False, True), (True, True)):
        cell = grid[(tc, tre)]
        med = {k: float(np.median([c[k] for c in cell])) for k in ("precision", "recall", "f1", "error_rate")}
        rows.append({"tc": tc, "tre": tre, **med, "per_seed": cell})
        mark = lambda b: "on" if b else "off"  # noqa: E731
        print(f"{mark(tc):<4}{mark(tre):<5}{100 * med['precision']:8.2f}{100 * med['recall']:8.2f}"
              f"{100 * med['f1']:8.2f}{100 * med['error_rate']:8.2f}")
    _atomic_write_json(out_dir / "ablation.json", {"command": "ablate", "seeds": seeds, "train": args.train,
                                                   "valid": args.valid, "test": args.test, "rows": rows,
                                                   "runs": runs, "started": started, "finished": time.time()})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="tblgen", description="Text-to-table generation toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    def model_flags(p):
        p.add_argument("--config", help="key = value file; flags override it")
        for name, typ in (("d-model", int), ("n-heads", int), ("d-ff", int), ("n-enc-layers", int),
                          ("n-dec-layers", int), ("max-len", int), ("dropout", float), ("epochs", int),
                          ("batch-size", int), ("lr", float), ("warmup-steps", int), ("clip", float),
                          ("time-budget", float), ("eval-limit", int), ("min-freq", int)):
            p.add_argument(f"--{name}", type=typ)
        p.add_argument("--seed", type=int)
        p.add_argument("--header-mode", choices=[m.value for m in HeaderMode])

    def gen_flags(p):
        p.add_argument("--constraint", action=argparse.BooleanOptionalAction, default=None)
        p.add_argument("--tre", action=argparse.BooleanOptionalAction, default=None)
        p.add_argument("--beam", type=int, help="beam width (default: greedy)")
        p.add_argument("--max-len", dest="gen_max_len", type=int)
        p.add_argument("--jobs", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--header-mode", choices=[m.value for m in HeaderMode])
        p.add_argument("--config")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.add_argument("--synonym-rate", type=float, default=0.3)
    p.add_argument("--distractor-rate", type=float, default=0.3)
    p.add_argument("--omission-rate", type=float, default=0.1)
    p.add_argument("--entities", type=int, nargs=2, default=(2, 4), metavar=("LO", "HI"))
    p.add_argument("--stats", type=int, nargs=2, default=(2, 4), metavar=("LO", "HI"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("encode", help="linearize dataset tables into token sequences")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--vocab", help="vocabulary file; built from the dataset and written here if absent")
    p.add_argument("--min-freq", type=int)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="parse token sequences back into a dataset")
    p.add_argument("sequences")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--header-mode", choices=[m.value for m in HeaderMode])
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("train", help="train a model from random initialization")
    p.add_argument("--train", required=True)
    p.add_argument("--valid")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--tre", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--manifest")
    model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate tables for a dataset's texts")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    gen_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score predictions (or a checkpoint) against gold tables")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred")
    p.add_argument("--checkpoint")
    p.add_argument("--average", choices=["table", "instance"])
    p.add_argument("--manifest")
    gen_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="2x2 table-constraint x relation-embedding grid")
    p.add_argument("--train", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--test")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--retrain", action="store_true", help="ignore checkpoints already in --out-dir")
    p.add_argument("--beam", type=int)
    p.add_argument("--gen-max-len", type=int, help="generation length limit")
    p.add_argument("--average", choices=["table", "instance"])
    model_flags(p)
    p.set_defaults(func=cmd_ablate)
    return ap


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        args._config = read_config(getattr(args, "config", None))
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, IoFailure, InvalidDocument, FileNotFoundError, CheckpointIoFailure,
            FormatVersionMismatch, ShapeMismatch) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())
