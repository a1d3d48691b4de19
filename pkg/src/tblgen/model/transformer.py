"""Pre-layer-norm transformer encoder-decoder with relation-aware decoder
self-attention, written directly against numpy."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..vocab import PAD
from .config import ModelConfig
from .layers import (
    attention_core,
    cross_entropy,
    ffn_backward,
    ffn_forward,
    layer_norm_backward,
    layer_norm_forward,
    mha_backward,
    mha_forward,
    merge_heads,
    split_heads,
)

Params = dict[str, np.ndarray]
TAU_KEYS = ("rk", "rv", "ck", "cv")


class ShapeMismatch(ValueError):
    pass


class SequenceTooLong(ValueError):
    pass


@dataclass
class Batch:
    src: np.ndarray          # (B, S) int
    src_mask: np.ndarray     # (B, S) bool, True on real tokens
    tgt_in: np.ndarray       # (B, T) int, <bos> + gold[:-1]
    tgt_out: np.ndarray      # (B, T) int
    tgt_mask: np.ndarray     # (B, T) bool
    rel: Optional[np.ndarray] = None  # (B, T, T) int8 labels over tgt_in

    def __len__(self) -> int:
        return self.src.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.src[idx], self.src_mask[idx], self.tgt_in[idx], self.tgt_out[idx],
                     self.tgt_mask[idx], None if self.rel is None else self.rel[idx])


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f, V, L, dk = cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.max_len, cfg.d_k
    shapes: dict[str, tuple[int, ...]] = {"tok_emb": (V, d), "enc_pos": (L, d), "dec_pos": (L, d)}

    def block(prefix: str, attn_names: tuple[str, ...]) -> None:
        for a_i, a in enumerate(attn_names, start=1):
            shapes[f"{prefix}.ln{a_i}.g"] = (d,)
            shapes[f"{prefix}.ln{a_i}.b"] = (d,)
            for m in ("wq", "wk", "wv", "wo"):
                shapes[f"{prefix}.{a}.{m}"] = (d, d)
        n = len(attn_names) + 1
        shapes[f"{prefix}.ln{n}.g"] = (d,)
        shapes[f"{prefix}.ln{n}.b"] = (d,)
        shapes[f"{prefix}.ff.w1"] = (d, f)
        shapes[f"{prefix}.ff.b1"] = (f,)
        shapes[f"{prefix}.ff.w2"] = (f, d)
        shapes[f"{prefix}.ff.b2"] = (d,)

    for l in range(cfg.n_enc_layers):
        block(f"enc{l}", ("attn",))
    shapes["enc.ln.g"] = (d,)
    shapes["enc.ln.b"] = (d,)
    for l in range(cfg.n_dec_layers):
        block(f"dec{l}", ("self", "cross"))
        for t in TAU_KEYS:
            shapes[f"dec{l}.tau.{t}"] = (dk,)
    shapes["dec.ln.g"] = (d,)
    shapes["dec.ln.b"] = (d,)
    shapes["out.w"] = (d, V)
    shapes["out.b"] = (V,)
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Params:
    """Random initial parameters. Relation embeddings start at zero so the
    relation-aware decoder begins exactly as a conventional one."""
    rng = np.random.default_rng(seed)
    p: Params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if ".tau." in name or leaf == "b" or leaf in ("b1", "b2"):
            arr = np.zeros(shape)
        elif leaf == "g":
            arr = np.ones(shape)
        elif name in ("tok_emb", "enc_pos", "dec_pos"):
            arr = rng.normal(0.0, 0.02, shape)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-limit, limit, shape)
        p[name] = arr.astype(dtype)
    return p


def _attn_weights(p: Params, prefix: str) -> dict[str, np.ndarray]:
    return {m: p[f"{prefix}.{m}"] for m in ("wq", "wk", "wv", "wo")}


def _tau(p: Params, l: int) -> dict[str, np.ndarray]:
    return {t: p[f"dec{l}.tau.{t}"] for t in TAU_KEYS}


def check_batch(cfg: ModelConfig, b: Batch) -> None:
    B, S = b.src.shape
    T = b.tgt_in.shape[1]
    if b.src_mask.shape != (B, S) or b.tgt_in.shape != b.tgt_out.shape or b.tgt_mask.shape != b.tgt_in.shape:
        raise ShapeMismatch("batch arrays disagree in shape")
    if b.tgt_in.shape[0] != B:
        raise ShapeMismatch("source and target batch sizes differ")
    if b.rel is not None and b.rel.shape != (B, T, T):
        raise ShapeMismatch(f"relation labels have shape {b.rel.shape}, expected {(B, T, T)}")
    if S > cfg.max_len or T > cfg.max_len:
        raise SequenceTooLong(f"sequence length {max(S, T)} exceeds max_len {cfg.max_len}")


class Seq2Seq:
    """Stateless forward/backward over an explicit parameter dict."""

    def __init__(self, cfg: ModelConfig) -> None:
        self.cfg = cfg

    # -- encoder -----------------------------------------------------------
    def encode(self, p: Params, src, src_mask, train=False, rng=None):
        cfg = self.cfg
        S = src.shape[1]
        p_drop = cfg.dropout if train else 0.0
        x = p["tok_emb"][src] + p["enc_pos"][:S]
        allowed = src_mask[:, None, None, :]
        caches = []
        for l in range(cfg.n_enc_layers):
            h, c1 = layer_norm_forward(x, p[f"enc{l}.ln1.g"], p[f"enc{l}.ln1.b"])
            a, ca = mha_forward(h, h, _attn_weights(p, f"enc{l}.attn"), cfg.n_heads, allowed,
                                p_drop=p_drop, rng=rng)
            x = x + a
            h2, c2 = layer_norm_forward(x, p[f"enc{l}.ln2.g"], p[f"enc{l}.ln2.b"])
            f, cf = ffn_forward(h2, p[f"enc{l}.ff.w1"], p[f"enc{l}.ff.b1"], p[f"enc{l}.ff.w2"],
                                p[f"enc{l}.ff.b2"], p_drop, rng)
            x = x + f
            caches.append((c1, ca, c2, cf))
        mem, cm = layer_norm_forward(x, p["enc.ln.g"], p["enc.ln.b"])
        return mem, (src, caches, cm)

    def _encode_backward(self, p, dmem, cache, grads):
        src, caches, cm = cache
        dx, grads["enc.ln.g"], grads["enc.ln.b"] = layer_norm_backward(dmem, cm)
        for l in reversed(range(self.cfg.n_enc_layers)):
            c1, ca, c2, cf = caches[l]
            dh2, *gf = ffn_backward(dx, cf)
            for k, g in zip(("w1", "b1", "w2", "b2"), gf):
                grads[f"enc{l}.ff.{k}"] = g
            d_, grads[f"enc{l}.ln2.g"], grads[f"enc{l}.ln2.b"] = layer_norm_backward(dh2, c2)
            dx = dx + d_
            dh, _, ga, _ = mha_backward(dx, ca, same_input=True)
            for k, g in ga.items():
                grads[f"enc{l}.attn.{k}"] = g
            d_, grads[f"enc{l}.ln1.g"], grads[f"enc{l}.ln1.b"] = layer_norm_backward(dh, c1)
            dx = dx + d_
        S = src.shape[1]
        np.add.at(grads["tok_emb"], src, dx)
        grads["enc_pos"][:S] += dx.sum(0)

    # -- full forward ------------------------------------------------------
    def forward(self, p: Params, b: Batch, use_tre: bool = False, train: bool = False, rng=None):
        """Logits ``(B, T, V)`` for teacher-forced targets, plus a backward cache."""
        cfg = self.cfg
        check_batch(cfg, b)
        p_drop = cfg.dropout if train else 0.0
        mem, enc_cache = self.encode(p, b.src, b.src_mask, train, rng)
        T = b.tgt_in.shape[1]
        y = p["tok_emb"][b.tgt_in] + p["dec_pos"][:T]
        causal = np.tril(np.ones((T, T), dtype=bool))[None, None]
        src_allowed = b.src_mask[:, None, None, :]
        rel = b.rel if use_tre else None
        if use_tre and rel is None:
            raise ShapeMismatch("relation labels required when use_tre is set")
        caches = []
        for l in range(cfg.n_dec_layers):
            h, c1 = layer_norm_forward(y, p[f"dec{l}.ln1.g"], p[f"dec{l}.ln1.b"])
            a, ca = mha_forward(h, h, _attn_weights(p, f"dec{l}.self"), cfg.n_heads, causal,
                                rel, _tau(p, l) if use_tre else None, p_drop, rng)
            y = y + a
            h2, c2 = layer_norm_forward(y, p[f"dec{l}.ln2.g"], p[f"dec{l}.ln2.b"])
            a2, cx = mha_forward(h2, mem, _attn_weights(p, f"dec{l}.cross"), cfg.n_heads, src_allowed,
                                 p_drop=p_drop, rng=rng)
            y = y + a2
            h3, c3 = layer_norm_forward(y, p[f"dec{l}.ln3.g"], p[f"dec{l}.ln3.b"])
            f, cf = ffn_forward(h3, p[f"dec{l}.ff.w1"], p[f"dec{l}.ff.b1"], p[f"dec{l}.ff.w2"],
                                p[f"dec{l}.ff.b2"], p_drop, rng)
            y = y + f
            caches.append((c1, ca, c2, cx, c3, cf))
        z, cz = layer_norm_forward(y, p["dec.ln.g"], p["dec.ln.b"])
        logits = z @ p["out.w"] + p["out.b"]
        return logits, (b, enc_cache, caches, cz, z, use_tre)

    def backward(self, p: Params, dlogits, cache) -> Params:
        cfg = self.cfg
        b, enc_cache, caches, cz, z, use_tre = cache
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        d = cfg.d_model
        grads["out.w"] = z.reshape(-1, d).T @ dlogits.reshape(-1, cfg.vocab_size)
        grads["out.b"] = dlogits.reshape(-1, cfg.vocab_size).sum(0)
        dy, grads["dec.ln.g"], grads["dec.ln.b"] = layer_norm_backward(dlogits @ p["out.w"].T, cz)
        dmem = None
        for l in reversed(range(cfg.n_dec_layers)):
            c1, ca, c2, cx, c3, cf = caches[l]
            dh3, *gf = ffn_backward(dy, cf)
            for k, g in zip(("w1", "b1", "w2", "b2"), gf):
                grads[f"dec{l}.ff.{k}"] = g
            d_, grads[f"dec{l}.ln3.g"], grads[f"dec{l}.ln3.b"] = layer_norm_backward(dh3, c3)
            dy = dy + d_
            dh2, dm, gx, _ = mha_backward(dy, cx, same_input=False)
            for k, g in gx.items():
                grads[f"dec{l}.cross.{k}"] = g
            dmem = dm if dmem is None else dmem + dm
            d_, grads[f"dec{l}.ln2.g"], grads[f"dec{l}.ln2.b"] = layer_norm_backward(dh2, c2)
            dy = dy + d_
            dh, _, gs, gt = mha_backward(dy, ca, same_input=True)
            for k, g in gs.items():
                grads[f"dec{l}.self.{k}"] = g
            for k, g in gt.items():
                grads[f"dec{l}.tau.{k}"] = g
            d_, grads[f"dec{l}.ln1.g"], grads[f"dec{l}.ln1.b"] = layer_norm_backward(dh, c1)
            dy = dy + d_
        T = b.tgt_in.shape[1]
        np.add.at(grads["tok_emb"], b.tgt_in, dy)
        grads["dec_pos"][:T] += dy.sum(0)
        self._encode_backward(p, dmem, enc_cache, grads)
        return grads

    def loss_and_grads(self, p: Params, b: Batch, use_tre: bool = False, train: bool = False, rng=None):
        logits, cache = self.forward(p, b, use_tre, train, rng)
        value, dlogits = cross_entropy(logits, b.tgt_out, b.tgt_mask)
        return value, self.backward(p, dlogits, cache)

    # -- incremental decoding ---------------------------------------------
    def start(self, p: Params, src, src_mask) -> "DecoderState":
        mem, _ = self.encode(p, src, src_mask)
        cfg = self.cfg
        cross = []
        for l in range(cfg.n_dec_layers):
            cross.append((split_heads(mem @ p[f"dec{l}.cross.wk"], cfg.n_heads),
                          split_heads(mem @ p[f"dec{l}.cross.wv"], cfg.n_heads)))
        B = src.shape[0]
        shape = (B, cfg.n_heads, cfg.max_len, cfg.d_k)
        dtype = p["tok_emb"].dtype
        self_kv = [(np.zeros(shape, dtype), np.zeros(shape, dtype)) for _ in range(cfg.n_dec_layers)]
        return DecoderState(cross, self_kv, src_mask[:, None, None, :], 0)

    def step(self, p: Params, st: "DecoderState", tokens, rel_row=None, use_tre: bool = False):
        """Feed one token per row; returns logits ``(B, V)`` for the next one.

        ``rel_row`` is ``(B, t + 1)`` int8: the labels of the new position
        against every position so far (itself included).
        """
        cfg = self.cfg
        t = st.length
        if t >= cfg.max_len:
            raise SequenceTooLong(f"decoder position {t} exceeds max_len {cfg.max_len}")
        y = (p["tok_emb"][tokens] + p["dec_pos"][t])[:, None, :]
        rel = rel_row[:, None, :] if use_tre else None
        for l in range(cfg.n_dec_layers):
            h, _ = layer_norm_forward(y, p[f"dec{l}.ln1.g"], p[f"dec{l}.ln1.b"])
            kbuf, vbuf = st.self_kv[l]
            q = split_heads(h @ p[f"dec{l}.self.wq"], cfg.n_heads)
            kbuf[:, :, t] = split_heads(h @ p[f"dec{l}.self.wk"], cfg.n_heads)[:, :, 0]
            vbuf[:, :, t] = split_heads(h @ p[f"dec{l}.self.wv"], cfg.n_heads)[:, :, 0]
            ctx, _ = attention_core(q, kbuf[:, :, : t + 1], vbuf[:, :, : t + 1], True, rel,
                                    _tau(p, l) if use_tre else None)
            y = y + merge_heads(ctx) @ p[f"dec{l}.self.wo"]
            h2, _ = layer_norm_forward(y, p[f"dec{l}.ln2.g"], p[f"dec{l}.ln2.b"])
            ck, cv = st.cross[l]
            q2 = split_heads(h2 @ p[f"dec{l}.cross.wq"], cfg.n_heads)
            ctx2, _ = attention_core(q2, ck, cv, st.src_allowed)
            y = y + merge_heads(ctx2) @ p[f"dec{l}.cross.wo"]
            h3, _ = layer_norm_forward(y, p[f"dec{l}.ln3.g"], p[f"dec{l}.ln3.b"])
            f, _ = ffn_forward(h3, p[f"dec{l}.ff.w1"], p[f"dec{l}.ff.b1"], p[f"dec{l}.ff.w2"],
                               p[f"dec{l}.ff.b2"])
            y = y + f
        z, _ = layer_norm_forward(y, p["dec.ln.g"], p["dec.ln.b"])
        st.length = t + 1
        return (z @ p["out.w"] + p["out.b"])[:, 0]


@dataclass
class DecoderState:
    cross: list
    self_kv: list
    src_allowed: np.ndarray
    length: int

    def select(self, idx) -> "DecoderState":
        """Reorder/duplicate rows (beam backpointers)."""
        idx = np.asarray(idx)
        return DecoderState(
            [(k[idx], v[idx]) for k, v in self.cross],
            [(k[idx], v[idx]) for k, v in self.self_kv],
            self.src_allowed[idx],
            self.length,
        )


def pad_batch(seqs, pad: int = PAD) -> tuple[np.ndarray, np.ndarray]:
    n = max(len(s) for s in seqs)
    out = np.full((len(seqs), n), pad, dtype=np.int64)
    mask = np.zeros((len(seqs), n), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
        mask[i, : len(s)] = True
    return out, mask
