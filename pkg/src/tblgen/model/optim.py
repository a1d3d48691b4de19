"""Adam with global-norm gradient clipping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .transformer import Batch, Params, Seq2Seq


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class AdamState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, p: Params) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in p.items()}, {k: np.zeros_like(a) for k, a in p.items()})


def clip_by_global_norm(grads: Params, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


def adam_update(p: Params, grads: Params, st: AdamState, lr: float) -> None:
    st.t += 1
    b1, b2 = st.beta1, st.beta2
    c1 = 1.0 - b1 ** st.t
    c2 = 1.0 - b2 ** st.t
    for k, g in grads.items():
        m = st.m[k]
        v = st.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p[k] -= (lr * (m / c1) / (np.sqrt(v / c2) + st.eps)).astype(p[k].dtype)


def train_step(model: Seq2Seq, p: Params, st: AdamState, b: Batch, lr: float, clip: float = 1.0,
               use_tre: bool = False, rng=None) -> tuple[Params, AdamState, float]:
    """One optimization step in place; returns ``(p, st, loss)``."""
    loss, grads = model.loss_and_grads(p, b, use_tre, train=rng is not None, rng=rng)
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss became {loss}")
    clip_by_global_norm(grads, clip)
    if lr != 0.0:
        adam_update(p, grads, st, lr)
    return p, st, loss
