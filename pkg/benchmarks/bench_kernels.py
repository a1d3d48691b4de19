"""Time the numba kernels against the numpy / python fallbacks.

    python3 benchmarks/bench_kernels.py [--batch 32] [--heads 4] [--length 100] [--repeat 20]

Both variants are imported in-process, so ``TBLGEN_NUMBA`` does not matter here.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from tblgen import _kernels as K
from tblgen.codec import encode_document
from tblgen.synth import SynthConfig, generate_corpus
from tblgen.train import vocab_from_records


def _targets(batch: int, length: int, seed: int):
    recs = generate_corpus(SynthConfig(n_examples=batch, seed=seed))
    v = vocab_from_records(recs)
    ids = np.zeros((batch, length), np.int64)
    lengths = np.zeros(batch, np.int64)
    for b, r in enumerate(recs):
        seq = encode_document(v, r.document())[:length]
        ids[b, : len(seq)] = seq
        lengths[b] = len(seq)
    return ids, lengths, np.zeros(batch, np.int64)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--heads", type=int, default=4)
    ap.add_argument("--length", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    import numba

    jit_rel = numba.njit(cache=True)(K._relations_into)

    @numba.njit(cache=True)
    def jit_batch(ids, lengths, modes, out):
        for b in range(ids.shape[0]):
            jit_rel(ids[b], lengths[b], modes[b], out[b])

    jit_bias = numba.njit(cache=True)(K._relation_bias_loop)
    jit_pool = numba.njit(cache=True)(K._relation_pool_loop)

    B, H, T = args.batch, args.heads, args.length
    rng = np.random.default_rng(args.seed)
    ids, lengths, modes = _targets(B, T, args.seed)
    labels = np.zeros((B, T, T), np.int8)
    jit_batch(ids, lengths, modes, labels)
    scores = rng.standard_normal((B, H, T, T)).astype(np.float32)
    q_row = rng.standard_normal((B, H, T)).astype(np.float32)
    q_col = rng.standard_normal((B, H, T)).astype(np.float32)
    weights = rng.random((B, H, T, T), dtype=np.float32)

    def relations(fn):
        def run():
            out = np.zeros((B, T, T), np.int8)
            fn(ids, lengths, modes, out)
        return run

    cases = [
        ("relations_batch", relations(K._relations_batch), relations(jit_batch)),
        ("relation_bias", lambda: K._relation_bias_np(scores.copy(), q_row, q_col, labels),
         lambda: jit_bias(scores.copy(), q_row, q_col, labels)),
        ("relation_pool", lambda: K._relation_pool_np(weights, labels), lambda: jit_pool(weights, labels)),
    ]
    print(f"B={B} H={H} T={T}, best of {args.repeat}")
    print(f"{'kernel':<18}{'fallback ms':>13}{'numba ms':>11}{'speedup':>9}")
    for name, slow, fast in cases:
        fast()  # compile
        t_slow = min(timeit.repeat(slow, number=1, repeat=args.repeat)) * 1e3
        t_fast = min(timeit.repeat(fast, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<18}{t_slow:13.3f}{t_fast:11.3f}{t_slow / t_fast:9.1f}x")


if __name__ == "__main__":
    main()
