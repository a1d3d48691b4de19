"""Tables and multi-table documents.

Cells are plain strings. An empty string is an empty cell. Whitespace inside a
cell is collapsed to single spaces on construction so that exact-match scoring
never depends on incidental spacing.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional

SEP_SURFACE = "<s>"
NEWLINE_SURFACE = "<n>"
_FORBIDDEN = (SEP_SURFACE, NEWLINE_SURFACE)


class HeaderMode(str, enum.Enum):
    BOTH = "both"
    COL_ONLY = "col"
    ROW_ONLY = "row"

    @property
    def has_row_headers(self) -> bool:
        return self is not HeaderMode.COL_ONLY

    @property
    def has_col_headers(self) -> bool:
        return self is not HeaderMode.ROW_ONLY


def normalize(text: str) -> str:
    return " ".join(text.split())


def _has_special(text: str) -> bool:
    return any(tok in _FORBIDDEN for tok in text.split())


@dataclass(frozen=True)
class Table:
    rows: tuple[tuple[str, ...], ...]
    header_mode: HeaderMode = HeaderMode.BOTH
    caption: Optional[str] = None

    def __init__(
        self,
        rows: Iterable[Iterable[str]],
        header_mode: HeaderMode | str = HeaderMode.BOTH,
        caption: Optional[str] = None,
    ) -> None:
        object.__setattr__(self, "rows", tuple(tuple(normalize(c) for c in r) for r in rows))
        object.__setattr__(self, "header_mode", HeaderMode(header_mode))
        object.__setattr__(self, "caption", None if caption is None else normalize(caption))

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.rows[0]) if self.rows else 0

    def cell(self, i: int, j: int) -> str:
        """Content of cell (i, j), 1-based."""
        return self.rows[i - 1][j - 1]


@dataclass(frozen=True)
class Document:
    tables: tuple[Table, ...] = field(default_factory=tuple)

    def __init__(self, tables: Iterable[Table]) -> None:
        object.__setattr__(self, "tables", tuple(tables))


# Violations are values, not exceptions: a malformed table is a normal thing
# to measure (e.g. repaired model output).


@dataclass(frozen=True)
class Violation:
    pass


@dataclass(frozen=True)
class EmptyTable(Violation):
    pass


@dataclass(frozen=True)
class NoColumns(Violation):
    row: int


@dataclass(frozen=True)
class NonRectangular(Violation):
    row: int


@dataclass(frozen=True)
class SpecialSymbolInCell(Violation):
    row: int
    col: int


@dataclass(frozen=True)
class BadCaption(Violation):
    pass


@dataclass(frozen=True)
class EmptyDocument(Violation):
    pass


@dataclass(frozen=True)
class MissingCaption(Violation):
    table: int


@dataclass(frozen=True)
class DuplicateCaption(Violation):
    table: int


def validate_table(t: Table) -> list[Violation]:
    out: list[Violation] = []
    if not t.rows:
        return [EmptyTable()]
    n_c = len(t.rows[0])
    if n_c == 0:
        out.append(NoColumns(row=1))
    for i, row in enumerate(t.rows, start=1):
        if i > 1 and len(row) != n_c:
            out.append(NonRectangular(row=i))
        for j, content in enumerate(row, start=1):
            if _has_special(content):
                out.append(SpecialSymbolInCell(i, j))
    if t.caption is not None and (not t.caption or _has_special(t.caption)):
        out.append(BadCaption())
    return out


def validate_document(d: Document) -> list[Violation]:
    if not d.tables:
        return [EmptyDocument()]
    out: list[Violation] = []
    for t in d.tables:
        out.extend(validate_table(t))
    if len(d.tables) > 1:
        seen: set[str] = set()
        for k, t in enumerate(d.tables, start=1):
            if t.caption is None:
                out.append(MissingCaption(table=k))
            elif t.caption in seen:
                out.append(DuplicateCaption(table=k))
            else:
                seen.add(t.caption)
    return out


class HeaderRequest(ValueError):
    """Raised when asking for the headers of a cell that is itself a header."""


def header_of(t: Table, i: int, j: int) -> tuple[str, str]:
    """Return ``(row_key, col_key)`` for the non-header cell (i, j), 1-based.

    Tables without row headers key rows by their first cell; tables without
    column headers key columns by their decimal index.
    """
    if not (1 <= i <= t.n_rows and 1 <= j <= len(t.rows[i - 1])):
        raise IndexError(f"cell ({i}, {j}) outside a {t.n_rows}x{t.n_cols} table")
    mode = t.header_mode
    if (mode.has_col_headers and i == 1) or (mode.has_row_headers and j == 1):
        raise HeaderRequest(f"cell ({i}, {j}) is a header cell under mode {mode.value}")
    row_key = t.rows[i - 1][0]
    col_key = t.rows[0][j - 1] if mode.has_col_headers else str(j)
    return row_key, col_key


def non_header_cells(t: Table) -> Iterable[tuple[int, int]]:
    r0 = 2 if t.header_mode.has_col_headers else 1
    c0 = 2 if t.header_mode.has_row_headers else 1
    for i in range(r0, t.n_rows + 1):
        for j in range(c0, len(t.rows[i - 1]) + 1):
            yield i, j

