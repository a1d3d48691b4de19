"""Data preparation, training loop and corpus evaluation."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .codec import encode_document
from .decoding import GenerateOptions, Generation, generate_batch
from .metrics import CorpusScore, aggregate, score_documents
from .model.config import ModelConfig
from .model.layers import cross_entropy
from .model.optim import AdamState, train_step
from .model.transformer import Batch, Params, Seq2Seq, init_params, pad_batch
from .relation import relations_batch
from .synth import DatasetRecord
from .table import HeaderMode
from .vocab import EOS, Vocab, build_vocab, encode_text

log = logging.getLogger(__name__)


@dataclass
class Example:
    src: list[int]
    tgt: list[int]           # <bos> ... <eos>
    record: DatasetRecord


def vocab_from_records(records: Sequence[DatasetRecord], min_freq: int = 1) -> Vocab:
    lines = []
    for r in records:
        lines.append(r.text)
        for t in r.tables:
            if t.caption:
                lines.append(t.caption)
            lines.extend(c for row in t.rows for c in row)
    return build_vocab(lines, min_freq)


def make_examples(v: Vocab, records: Sequence[DatasetRecord]) -> list[Example]:
    return [Example(encode_text(v, r.text) + [EOS], encode_document(v, r.document()), r) for r in records]


def make_batch(examples: Sequence[Example], mode: HeaderMode | str = HeaderMode.BOTH) -> Batch:
    src, src_mask = pad_batch([e.src for e in examples])
    tgt, tgt_mask = pad_batch([e.tgt for e in examples])
    tgt_in, tgt_out = tgt[:, :-1], tgt[:, 1:]
    lengths = [len(e.tgt) - 1 for e in examples]
    rel = relations_batch(tgt_in, lengths, mode)
    return Batch(src, src_mask, tgt_in, tgt_out, tgt_mask[:, 1:], rel)


def batches(examples: Sequence[Example], batch_size: int, rng: Optional[np.random.Generator] = None,
            mode: HeaderMode | str = HeaderMode.BOTH) -> list[Batch]:
    """Length-bucketed batches; shuffled (order and buckets) when ``rng`` is given."""
    idx = np.arange(len(examples))
    if rng is not None:
        idx = rng.permutation(idx)
    # sort within windows of 50 batches to cut padding but keep randomness
    window = batch_size * 50
    ordered = []
    for s in range(0, len(idx), window):
        chunk = sorted(idx[s:s + window], key=lambda i: len(examples[i].tgt) + len(examples[i].src))
        ordered.extend(chunk)
    groups = [ordered[s:s + batch_size] for s in range(0, len(ordered), batch_size)]
    if rng is not None:
        groups = [groups[i] for i in rng.permutation(len(groups))]
    return [make_batch([examples[i] for i in g], mode) for g in groups]


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    warmup_steps: int = 200
    clip: float = 1.0
    tre: bool = True
    seed: int = 0
    time_budget_s: float = 30 * 60.0
    eval_every: int = 1
    eval_limit: int = 200
    header_mode: str = "both"


@dataclass
class TrainResult:
    params: Params
    model_config: ModelConfig
    history: list[dict] = field(default_factory=list)
    train_seconds: float = 0.0
    steps: int = 0


def lr_at(step: int, total: int, tc: TrainConfig) -> float:
    if step < tc.warmup_steps:
        return tc.lr * (step + 1) / tc.warmup_steps
    frac = (step - tc.warmup_steps) / max(total - tc.warmup_steps, 1)
    return tc.lr * 0.5 * (1.0 + math.cos(math.pi * min(frac, 1.0)))


def batch_loss(model: Seq2Seq, p: Params, bs: Sequence[Batch], use_tre: bool) -> float:
    total = 0.0
    n = 0
    for b in bs:
        logits, _ = model.forward(p, b, use_tre)
        value, _ = cross_entropy(logits, b.tgt_out, b.tgt_mask)
        k = int(b.tgt_mask.sum())
        total += value * k
        n += k
    return total / max(n, 1)


def generate_all(model: Seq2Seq, p: Params, v: Vocab, sources: Sequence[Sequence[int]], opts: GenerateOptions,
                 batch_size: int = 64, jobs: int = 1) -> list[Generation]:
    """Generate for every source, batching sources of similar length. Output
    order follows ``sources`` and does not depend on ``jobs``."""
    order = sorted(range(len(sources)), key=lambda i: len(sources[i]))
    chunks = [order[s:s + batch_size] for s in range(0, len(order), batch_size)]

    def run(chunk):
        return generate_batch(model, p, [sources[i] for i in chunk], opts, v)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    out: dict[int, Generation] = {}
    for chunk, gens in zip(chunks, results):
        out.update(zip(chunk, gens))
    return [out[i] for i in range(len(sources))]


def evaluate(model: Seq2Seq, p: Params, v: Vocab, examples: Sequence[Example], opts: GenerateOptions,
             batch_size: int = 64, average: str = "table", jobs: int = 1) -> tuple[CorpusScore, list[Generation]]:
    gens = generate_all(model, p, v, [e.src for e in examples], opts, batch_size, jobs)
    per_doc = [score_documents(g.document, e.record.document()) for g, e in zip(gens, examples)]
    return aggregate(per_doc, [g.well_formed for g in gens], average), gens


def train(model_cfg: ModelConfig, tc: TrainConfig, v: Vocab, train_ex: Sequence[Example],
          val_ex: Sequence[Example] = (), on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Fit from random initialization. Stops after ``tc.epochs`` or when the
    wall-clock budget would be exceeded by another epoch."""
    model = Seq2Seq(model_cfg)
    p = init_params(model_cfg, tc.seed, np.float32)
    st = AdamState.zeros_like(p)
    rng = np.random.default_rng(tc.seed)
    steps_per_epoch = math.ceil(len(train_ex) / tc.batch_size)
    total = steps_per_epoch * tc.epochs
    res = TrainResult(p, model_cfg)
    val_batches = batches(val_ex, tc.batch_size, None, tc.header_mode) if val_ex else []
    eval_opts = GenerateOptions(constraint=True, tre=tc.tre, header_mode=HeaderMode(tc.header_mode),
                                max_len=model_cfg.max_len)
    start = time.perf_counter()
    step = 0
    epoch_time = 0.0
    for epoch in range(1, tc.epochs + 1):
        t0 = time.perf_counter()
        if epoch > 1 and (t0 - start) + epoch_time > tc.time_budget_s:
            log.info("time budget reached after %d epochs", epoch - 1)
            break
        losses = []
        for b in batches(train_ex, tc.batch_size, rng, tc.header_mode):
            p, st, loss = train_step(model, p, st, b, lr_at(step, total, tc), tc.clip, tc.tre, rng)
            losses.append(loss)
            step += 1
        row = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if val_batches:
            row["val_loss"] = batch_loss(model, p, val_batches, tc.tre)
            if tc.eval_every and epoch % tc.eval_every == 0:
                score, _ = evaluate(model, p, v, val_ex[: tc.eval_limit], eval_opts)
                row["val_f1"] = score.f1
        epoch_time = time.perf_counter() - t0
        row["seconds"] = time.perf_counter() - start
        res.history.append(row)
        log.info("epoch %d train_loss %.4f val_loss %s val_f1 %s", epoch, row["train_loss"],
                 f"{row['val_loss']:.4f}" if "val_loss" in row else "-",
                 f"{row['val_f1']:.4f}" if "val_f1" in row else "-")
        if on_epoch:
            on_epoch(row)
    res.params = p
    res.steps = step
    res.train_seconds = time.perf_counter() - start
    return res
