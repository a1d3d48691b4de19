"""Forward/backward pairs for the building blocks.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache and returns input gradients plus a
dict of parameter gradients.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .. import _kernels

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


def layer_norm_forward(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def layer_norm_backward(dy, cache):
    xhat, inv, g = cache
    d = xhat.shape[-1]
    red = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(red)
    db = dy.sum(red)
    dxhat = dy * g
    dx = inv / d * (d * dxhat - dxhat.sum(-1, keepdims=True) - xhat * (dxhat * xhat).sum(-1, keepdims=True))
    return dx, dg, db


def gelu_forward(x):
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x * x))
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_backward(dy, cache):
    x, t = cache
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def softmax(x, axis=-1):
    m = x.max(axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis, keepdims=True)


def log_softmax(x, axis=-1):
    m = x.max(axis, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis, keepdims=True))


def dropout_mask(shape, p, rng, dtype):
    if p <= 0.0 or rng is None:
        return None
    dtype = np.dtype(dtype).type
    return (rng.random(shape, dtype=np.float32) >= p).astype(dtype) * dtype(1.0 / (1.0 - p))


def split_heads(x, n_heads):
    B, T, d = x.shape
    return x.reshape(B, T, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def merge_heads(x):
    B, H, T, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dk)


def attention_core(q, k, v, allowed, rel=None, tau=None, p_drop=0.0, rng=None):
    """Scaled dot-product attention over split heads.

    q: (B,H,T,dk), k/v: (B,H,S,dk), allowed: bool broadcastable to (B,H,T,S).
    rel: int8 (B,T,S) relation labels; tau: dict with ``rk``, ``rv``, ``ck``,
    ``cv`` vectors of size dk. Keys and values of related positions are shifted
    by the matching relation embedding.
    """
    scale = 1.0 / math.sqrt(q.shape[-1])
    raw = q @ k.transpose(0, 1, 3, 2)
    use_rel = rel is not None and tau is not None
    if use_rel:
        _kernels.relation_bias(raw, q @ tau["rk"], q @ tau["ck"], rel)
    scores = np.where(allowed, raw * scale, -np.inf)
    attn = softmax(scores)
    mask = dropout_mask(attn.shape, p_drop, rng, attn.dtype)
    attn_d = attn if mask is None else attn * mask
    ctx = attn_d @ v
    pooled = None
    if use_rel:
        pooled = _kernels.relation_pool(attn_d, rel)
        ctx = ctx + pooled[0][..., None] * tau["rv"] + pooled[1][..., None] * tau["cv"]
    cache = (q, k, v, attn, mask, attn_d, rel if use_rel else None, tau if use_rel else None, pooled, scale)
    return ctx, cache


def attention_core_backward(dctx, cache):
    q, k, v, attn, mask, attn_d, rel, tau, pooled, scale = cache
    dattn_d = dctx @ v.transpose(0, 1, 3, 2)
    dv = attn_d.transpose(0, 1, 3, 2) @ dctx
    grads = {}
    if rel is not None:
        _kernels.relation_bias(dattn_d, dctx @ tau["rv"], dctx @ tau["cv"], rel)
        grads["rv"] = np.einsum("bht,bhtd->d", pooled[0], dctx)
        grads["cv"] = np.einsum("bht,bhtd->d", pooled[1], dctx)
    dattn = dattn_d if mask is None else dattn_d * mask
    dscores = attn * (dattn - (dattn * attn).sum(-1, keepdims=True))
    draw = dscores * scale
    dq = draw @ k
    dk = draw.transpose(0, 1, 3, 2) @ q
    if rel is not None:
        prow, pcol = _kernels.relation_pool(draw, rel)
        dq += prow[..., None] * tau["rk"] + pcol[..., None] * tau["ck"]
        grads["rk"] = np.einsum("bht,bhtd->d", prow, q)
        grads["ck"] = np.einsum("bht,bhtd->d", pcol, q)
    return dq, dk, dv, grads


def mha_forward(xq, xkv, w, n_heads, allowed, rel=None, tau=None, p_drop=0.0, rng=None):
    """Multi-head attention; ``w`` holds ``wq``, ``wk``, ``wv``, ``wo``."""
    q = split_heads(xq @ w["wq"], n_heads)
    k = split_heads(xkv @ w["wk"], n_heads)
    v = split_heads(xkv @ w["wv"], n_heads)
    ctx, core = attention_core(q, k, v, allowed, rel, tau, p_drop, rng)
    merged = merge_heads(ctx)
    return merged @ w["wo"], (xq, xkv, merged, core, w, n_heads)


def mha_backward(dout, cache, same_input: bool):
    xq, xkv, merged, core, w, n_heads = cache
    d = xq.shape[-1]
    grads = {"wo": merged.reshape(-1, d).T @ dout.reshape(-1, dout.shape[-1])}
    dctx = split_heads(dout @ w["wo"].T, n_heads)
    dq, dk, dv, tgrads = attention_core_backward(dctx, core)
    dq, dk, dv = merge_heads(dq), merge_heads(dk), merge_heads(dv)
    xq2 = xq.reshape(-1, d)
    xkv2 = xkv.reshape(-1, d)
    grads["wq"] = xq2.T @ dq.reshape(-1, d)
    grads["wk"] = xkv2.T @ dk.reshape(-1, d)
    grads["wv"] = xkv2.T @ dv.reshape(-1, d)
    dxq = dq @ w["wq"].T
    dxkv = dk @ w["wk"].T + dv @ w["wv"].T
    if same_input:
        dxq = dxq + dxkv
        dxkv = None
    return dxq, dxkv, grads, tgrads


def ffn_forward(x, w1, b1, w2, b2, p_drop=0.0, rng=None):
    pre = x @ w1 + b1
    h, gcache = gelu_forward(pre)
    mask = dropout_mask(h.shape, p_drop, rng, h.dtype)
    hd = h if mask is None else h * mask
    return hd @ w2 + b2, (x, hd, mask, gcache, w1, w2)


def ffn_backward(dy, cache):
    x, hd, mask, gcache, w1, w2 = cache
    d_ff = hd.shape[-1]
    d = x.shape[-1]
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw2 = hd.reshape(-1, d_ff).T @ dy2
    db2 = dy2.sum(0)
    dh = dy @ w2.T
    if mask is not None:
        dh = dh * mask
    dpre = gelu_backward(dh, gcache)
    dpre2 = dpre.reshape(-1, d_ff)
    dw1 = x.reshape(-1, d).T @ dpre2
    db1 = dpre2.sum(0)
    return dpre @ w1.T, dw1, db1, dw2, db2


def cross_entropy(logits, targets, mask: Optional[np.ndarray] = None):
    """Mean token-level negative log-likelihood and its gradient wrt logits."""
    if mask is None:
        mask = np.ones(targets.shape, dtype=bool)
    logp = log_softmax(logits)
    n = max(int(mask.sum()), 1)
    picked = np.take_along_axis(logp, targets[..., None], -1)[..., 0]
    value = float(-(picked * mask).sum() / n)
    grad = np.exp(logp)
    np.put_along_axis(grad, targets[..., None], np.take_along_axis(grad, targets[..., None], -1) - 1.0, -1)
    grad *= (mask / n)[..., None].astype(grad.dtype)
    return value, grad
