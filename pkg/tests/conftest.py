from __future__ import annotations

import random

import numpy as np
import pytest

from tblgen.model.config import ModelConfig
from tblgen.model.transformer import Batch, init_params, pad_batch
from tblgen.relation import relations_batch
from tblgen.table import Document, HeaderMode, Table
from tblgen.vocab import Vocab, build_vocab

WORDS = ["Al", "Horford", "Hawks", "Points", "Assists", "5", "17", "0", "team", "Free", "throw", "%", "a", "b"]


@pytest.fixture(scope="session")
def vocab() -> Vocab:
    return build_vocab([" ".join(WORDS)])


def random_cell(rng: random.Random) -> str:
    k = rng.choice([0, 0, 1, 1, 1, 2, 3])
    return " ".join(rng.choice(WORDS) for _ in range(k))


def random_document(rng: random.Random, max_rows: int = 8, max_cols: int = 8, max_tables: int = 3) -> Document:
    n_tables = rng.randint(1, max_tables)
    tables = []
    captions: set[str] = set()
    for _ in range(n_tables):
        n_r, n_c = rng.randint(1, max_rows), rng.randint(1, max_cols)
        rows = [[random_cell(rng) for _ in range(n_c)] for _ in range(n_r)]
        caption = None
        if n_tables > 1 or rng.random() < 0.3:
            while caption is None or caption in captions:
                caption = " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 3)))
            captions.add(caption)
        tables.append(Table(rows, rng.choice(list(HeaderMode)), caption))
    return Document(tables)


def tiny_config(vocab_size: int, **kw) -> ModelConfig:
    base = dict(vocab_size=vocab_size, d_model=16, n_heads=2, d_ff=32, n_enc_layers=1, n_dec_layers=1,
                max_len=64, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def random_batch(cfg: ModelConfig, rng: np.random.Generator, B: int = 3, S: int = 7, T: int = 9,
                 seqs=None) -> Batch:
    """Random source tokens and targets; targets are table-like when ``seqs`` is given."""
    lo = 6  # first non-special id
    if seqs is not None:
        B = len(seqs)
    src = [list(rng.integers(lo, cfg.vocab_size, size=rng.integers(2, S + 1))) for _ in range(B)]
    if seqs is None:
        seqs = []
        for _ in range(B):
            body = list(rng.choice([4, 5] + list(range(lo, cfg.vocab_size)), size=rng.integers(3, T + 1)))
            seqs.append([1, 4] + body + [2])
    s, sm = pad_batch(src)
    t, tm = pad_batch(seqs)
    lengths = [len(q) - 1 for q in seqs]
    rel = relations_batch(t[:, :-1], lengths, "both")
    return Batch(s, sm, t[:, :-1], t[:, 1:], tm[:, 1:], rel)


def params64(cfg: ModelConfig, seed: int = 0, tau_scale: float = 0.0) -> dict:
    p = init_params(cfg, seed, np.float64)
    if tau_scale:
        rng = np.random.default_rng(seed + 1)
        for k in p:
            if ".tau." in k:
                p[k] = rng.normal(0, tau_scale, p[k].shape)
    return p
