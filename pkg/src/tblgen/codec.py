"""Linearization of documents into token sequences and back.

Grammar (one table)::

    <s> c11 <s> c12 <s> ... <s> c1n <s> <n> <s> c21 <s> ... <s>

Rows always open with ``<s>``; a line that does not is a caption and starts a
new table. The whole sequence is wrapped in ``<bos> ... <eos>``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .table import Document, HeaderMode, Table, Violation, validate_document
from .vocab import BOS, EOS, NL, PAD, SEP, Vocab, encode_text

_DROPPED = (PAD, BOS)


class InvalidDocument(ValueError):
    def __init__(self, violations: list[Violation]) -> None:
        super().__init__(f"document fails validation: {violations}")
        self.violations = violations


class EmptyOutput(ValueError):
    pass


@dataclass(frozen=True)
class LinearizedRow:
    cells: tuple[str, ...]


def encode_document(v: Vocab, d: Document) -> list[int]:
    violations = validate_document(d)
    if violations:
        raise InvalidDocument(violations)
    out = [BOS]
    for k, t in enumerate(d.tables):
        if k:
            out.append(NL)
        if t.caption is not None:
            out.extend(encode_text(v, t.caption))
            out.append(NL)
        for i, row in enumerate(t.rows):
            if i:
                out.append(NL)
            out.append(SEP)
            for cell in row:
                out.extend(encode_text(v, cell))
                out.append(SEP)
    out.append(EOS)
    return out


def _parse_row(line: list[int]) -> tuple[list[list[int]], bool]:
    """Split a line opening with <s> into cells; returns (cells, clean)."""
    cells: list[list[int]] = []
    cur: list[int] = []
    for tok in line[1:]:
        if tok == SEP:
            cells.append(cur)
            cur = []
        else:
            cur.append(tok)
    clean = not cur and bool(cells)
    if cur:
        # tokens after the closing separator fold into the last cell
        if cells:
            cells[-1].extend(cur)
        else:
            cells.append(cur)
    if not cells:
        cells.append([])
    return cells, clean


def repair(rows: Sequence[LinearizedRow], header_mode: HeaderMode | str = HeaderMode.BOTH,
           caption: Optional[str] = None) -> Table:
    """Force a rectangular table: the first row fixes the column count, later
    rows are truncated or right-padded with empty cells."""
    if not rows:
        raise ValueError("repair needs at least one row")
    n_c = len(rows[0].cells)
    fixed = [list(r.cells[:n_c]) + [""] * (n_c - len(r.cells)) for r in rows]
    return Table(fixed, header_mode, caption)


def _modes(header_mode, n: int) -> list[HeaderMode]:
    if isinstance(header_mode, (str, HeaderMode)):
        return [HeaderMode(header_mode)] * n
    modes = [HeaderMode(m) for m in header_mode]
    return (modes + [modes[-1] if modes else HeaderMode.BOTH] * n)[:n]


def decode_sequence(v: Vocab, ids: Sequence[int],
                    header_mode: HeaderMode | str | Sequence[HeaderMode | str] = HeaderMode.BOTH,
                    ) -> tuple[Document, bool]:
    """Parse a token sequence back into a document.

    Returns the (repaired, always valid) document and whether the raw sequence
    was well formed. ``header_mode`` is a single mode or one per table.
    """
    ids = [int(i) for i in ids]
    if not ids or ids[0] != BOS:
        raise ValueError("sequence must begin with <bos>")
    body = ids[1:]
    well_formed = EOS in body  # a sequence cut off before <eos> is incomplete
    if well_formed:
        body = body[: body.index(EOS)]
    if any(t in _DROPPED for t in body):
        well_formed = False
        body = [t for t in body if t not in _DROPPED]

    lines: list[list[int]] = [[]]
    for tok in body:
        if tok == NL:
            lines.append([])
        else:
            lines[-1].append(tok)

    # groups of (caption ids or None, list of rows); each row a list of cells
    groups: list[tuple[Optional[list[int]], list[list[list[int]]]]] = []
    for line in lines:
        if not line:
            well_formed = False
            continue
        if line[0] != SEP:
            if SEP in line:
                well_formed = False
                cut = line.index(SEP)
                groups.append((line[:cut], []))
                line = line[cut:]
            else:
                groups.append((line, []))
                continue
        if not groups:
            groups.append((None, []))
        cells, clean = _parse_row(line)
        well_formed &= clean
        groups[-1][1].append(cells)

    if not any(rows for _, rows in groups):
        raise EmptyOutput("no table row in sequence")

    kept = []
    seen: set[str] = set()
    for cap_ids, rows in groups:
        if not rows:
            well_formed = False
            continue
        caption = " ".join(v.token_of(t) for t in cap_ids) if cap_ids is not None else None
        if caption is not None and caption in seen:
            well_formed = False
            continue
        if caption is not None:
            seen.add(caption)
        n_c = len(rows[0])
        if any(len(r) != n_c for r in rows):
            well_formed = False
        kept.append((caption, rows))

    if len(kept) > 1 and any(c is None for c, _ in kept):
        well_formed = False
        kept = [g for g in kept if g[0] is not None] or kept[:1]

    modes = _modes(header_mode, len(kept))
    tables = []
    for (caption, rows), mode in zip(kept, modes):
        lrows = [LinearizedRow(tuple(" ".join(v.token_of(t) for t in c) for c in r)) for r in rows]
        tables.append(repair(lrows, mode, caption))
    return Document(tables), well_formed


def is_well_formed(v: Vocab, ids: Sequence[int], header_mode=HeaderMode.BOTH) -> bool:
    try:
        return decode_sequence(v, ids, header_mode)[1]
    except EmptyOutput:
        return False
