"""Header relations between positions of a linearized table sequence.

For a token inside a non-header cell (r, c), earlier tokens that form the
content of cell (r, 1) are its row header and those of cell (1, c) its column
header. The separator closing a cell belongs to that cell; the separator
opening a row belongs to none. Captions reset the header context.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from ._kernels import COL, NONE, ROW
from .table import HeaderMode
from .vocab import BOS, EOS, NL, PAD, SEP

__all__ = ["NONE", "ROW", "COL", "RelationState", "relations_full", "relations_batch",
           "relation_step", "label_pairs"]


def relations_full(ids: Sequence[int], mode: HeaderMode | str = HeaderMode.BOTH) -> np.ndarray:
    """Dense ``(T, T)`` int8 label matrix; ``out[i, j]`` is the label of pair (i, j)."""
    arr = np.asarray(ids, dtype=np.int64)
    n = arr.shape[0]
    out = np.zeros((n, n), dtype=np.int8)
    _kernels.relations_into(arr, n, _kernels.mode_code(mode), out)
    return out


def relations_batch(ids: np.ndarray, lengths: Sequence[int],
                    modes: Sequence[HeaderMode | str] | HeaderMode | str = HeaderMode.BOTH) -> np.ndarray:
    """Labels for a padded ``(B, T)`` id matrix; returns ``(B, T, T)`` int8."""
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    B, T = ids.shape
    if isinstance(modes, (str, HeaderMode)):
        modes = [modes] * B
    codes = np.array([_kernels.mode_code(m) for m in modes], dtype=np.int64)
    out = np.zeros((B, T, T), dtype=np.int8)
    _kernels.relations_batch(ids, np.asarray(lengths, dtype=np.int64), codes, out)
    return out


def label_pairs(matrix: np.ndarray) -> dict[tuple[int, int], int]:
    ii, jj = np.nonzero(matrix)
    return {(int(i), int(j)): int(matrix[i, j]) for i, j in zip(ii, jj)}


@dataclass
class RelationState:
    """Incremental parse cursor used while generating."""

    mode: HeaderMode = HeaderMode.BOTH
    ended: bool = False
    in_row: bool = False
    line_pos: int = 0
    row_idx: int = 0
    seps: int = 0
    n_c: Optional[int] = None
    # content-token positions of each first-row cell, by column index
    col_cells: dict[int, list[int]] = field(default_factory=dict)
    row_cell: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.mode = HeaderMode(self.mode)

    def copy(self) -> "RelationState":
        return copy.deepcopy(self)

    def step(self, tok: int, pos: int) -> list[tuple[int, int]]:
        if self.ended or tok in (BOS, PAD):
            return []
        if tok == EOS:
            self.ended = True
            return []
        if tok == NL:
            if self.in_row and self.row_idx == 1:
                self.n_c = self.seps - 1
            self.line_pos = 0
            self.in_row = False
            return []
        if self.line_pos == 0:
            self.line_pos = 1
            if tok == SEP:
                self.in_row = True
                self.row_idx += 1
                self.seps = 1
                self.row_cell = []
            else:
                self.in_row = False
                self.row_idx = 0
                self.n_c = None
                self.col_cells = {}
            return []
        self.line_pos += 1
        if not self.in_row:
            return []
        c = self.seps
        if tok == SEP:
            self.seps += 1
        else:
            if self.row_idx == 1:
                self.col_cells.setdefault(c, []).append(pos)
            if c == 1:
                self.row_cell.append(pos)
        has_row = self.mode.has_row_headers
        has_col = self.mode.has_col_headers
        if (has_col and self.row_idx < 2) or (has_row and c < 2):
            return []
        labels: list[tuple[int, int]] = []
        if has_row:
            labels.extend((j, ROW) for j in self.row_cell)
        if has_col and self.n_c is not None and c <= self.n_c:
            labels.extend((j, COL) for j in self.col_cells.get(c, ()))
        return labels


def relation_step(st: RelationState, token: int, position: int) -> tuple[RelationState, list[tuple[int, int]]]:
    labels = st.step(int(token), position)
    return st, labels
