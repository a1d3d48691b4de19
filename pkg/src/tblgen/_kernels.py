"""Hot loops, compiled with numba when available.

Set ``TBLGEN_NUMBA=0`` to force the pure numpy / python path. Both paths are
kept behaviourally identical and are cross-checked in the test suite.
"""
from __future__ import annotations

import os

import numpy as np

from .vocab import BOS, EOS, NL, PAD, SEP

NONE, ROW, COL = 0, 1, 2
MODE_BOTH, MODE_COL, MODE_ROW = 0, 1, 2

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("TBLGEN_NUMBA", "1") != "0"


def _relations_into(ids, n, mode, out):
    """Fill ``out[:n, :n]`` with relation labels for one sequence."""
    has_row = mode != MODE_COL
    has_col = mode != MODE_ROW
    col_start = np.full(n + 1, -1, np.int64)
    col_end = np.full(n + 1, -1, np.int64)
    n_c = -1
    row_idx = 0
    line_pos = 0
    in_row = False
    seps = 0
    rh_start = -1
    rh_end = -1
    ended = False
    for i in range(n):
        tok = ids[i]
        if ended or tok == BOS or tok == PAD:
            continue
        if tok == EOS:
            ended = True
            continue
        if tok == NL:
            if in_row and row_idx == 1:
                n_c = seps - 1
            line_pos = 0
            in_row = False
            continue
        if line_pos == 0:
            line_pos = 1
            if tok == SEP:
                in_row = True
                row_idx += 1
                seps = 1
                rh_start = -1
                rh_end = -1
            else:
                # caption: a new table starts, headers from earlier tables vanish
                in_row = False
                row_idx = 0
                n_c = -1
                for c in range(n + 1):
                    col_start[c] = -1
                    col_end[c] = -1
            continue
        line_pos += 1
        if not in_row:
            continue
        c = seps
        if tok == SEP:
            seps += 1
        else:
            if row_idx == 1 and c <= n:
                if col_start[c] < 0:
                    col_start[c] = i
                col_end[c] = i + 1
            if c == 1:
                if rh_start < 0:
                    rh_start = i
                rh_end = i + 1
        target = True
        if has_col and row_idx < 2:
            target = False
        if has_row and c < 2:
            target = False
        if not target:
            continue
        # spans may contain stray <bos>/<pad>; those are never header tokens
        if has_row and rh_start >= 0:
            for j in range(rh_start, rh_end):
                if ids[j] != BOS and ids[j] != PAD:
                    out[i, j] = ROW
        if has_col and n_c >= 0 and c <= n_c and col_start[c] >= 0:
            for j in range(col_start[c], col_end[c]):
                if ids[j] != BOS and ids[j] != PAD:
                    out[i, j] = COL


def _relations_batch(ids, lengths, modes, out):
    for b in range(ids.shape[0]):
        _relations_into(ids[b], lengths[b], modes[b], out[b])


def _relation_bias_np(scores, q_row, q_col, labels):
    # scores (B,H,T,S); q_row/q_col (B,H,T); labels (B,T,S)
    is_row = (labels == ROW)[:, None]
    is_col = (labels == COL)[:, None]
    scores += np.where(is_row, q_row[..., None], 0.0) + np.where(is_col, q_col[..., None], 0.0)


def _relation_pool_np(weights, labels):
    # weights (B,H,T,S) -> per-label sums (B,H,T) for ROW and COL
    is_row = (labels == ROW)[:, None].astype(weights.dtype)
    is_col = (labels == COL)[:, None].astype(weights.dtype)
    return (weights * is_row).sum(-1), (weights * is_col).sum(-1)


def _relation_bias_loop(scores, q_row, q_col, labels):
    B, H, T, S = scores.shape
    for b in range(B):
        for t in range(T):
            for s in range(S):
                lab = labels[b, t, s]
                if lab == ROW:
                    for h in range(H):
                        scores[b, h, t, s] += q_row[b, h, t]
                elif lab == COL:
                    for h in range(H):
                        scores[b, h, t, s] += q_col[b, h, t]


def _relation_pool_loop(weights, labels):
    B, H, T, S = weights.shape
    row = np.zeros((B, H, T), weights.dtype)
    col = np.zeros((B, H, T), weights.dtype)
    for b in range(B):
        for t in range(T):
            for s in range(S):
                lab = labels[b, t, s]
                if lab == ROW:
                    for h in range(H):
                        row[b, h, t] += weights[b, h, t, s]
                elif lab == COL:
                    for h in range(H):
                        col[b, h, t] += weights[b, h, t, s]
    return row, col


if USE_NUMBA:
    _relations_into_jit = numba.njit(cache=True)(_relations_into)

    @numba.njit(cache=True)
    def _relations_batch_jit(ids, lengths, modes, out):
        for b in range(ids.shape[0]):
            _relations_into_jit(ids[b], lengths[b], modes[b], out[b])

    relation_bias = numba.njit(cache=True)(_relation_bias_loop)
    relation_pool = numba.njit(cache=True)(_relation_pool_loop)
    relations_into = _relations_into_jit
    relations_batch = _relations_batch_jit
else:
    relation_bias = _relation_bias_np
    relation_pool = _relation_pool_np
    relations_into = _relations_into
    relations_batch = _relations_batch


def mode_code(mode) -> int:
    from .table import HeaderMode

    return {HeaderMode.BOTH: MODE_BOTH, HeaderMode.COL_ONLY: MODE_COL,
            HeaderMode.ROW_ONLY: MODE_ROW}[HeaderMode(mode)]
