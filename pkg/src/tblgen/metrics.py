"""Cell-level exact-match scoring and error rate."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .codec import EmptyOutput, decode_sequence
from .table import Document, HeaderMode, Table, header_of, non_header_cells
from .vocab import Vocab


@dataclass(frozen=True)
class KeyedCell:
    row_key: str
    col_key: str
    content: str


@dataclass(frozen=True)
class TableScore:
    precision: float
    recall: float
    f1: float


def keyed_cells(t: Table) -> Counter:
    """Multiset of non-empty, non-header cells keyed by their headers."""
    out: Counter = Counter()
    for i, j in non_header_cells(t):
        content = t.cell(i, j)
        if content:
            out[KeyedCell(*header_of(t, i, j), content)] += 1
    return out


def score_counts(n_pred: int, n_gold: int, matched: int) -> TableScore:
    if n_pred == 0 and n_gold == 0:
        return TableScore(1.0, 1.0, 1.0)
    p = matched / n_pred if n_pred else 0.0
    r = matched / n_gold if n_gold else 1.0
    # equals 2pr / (p + r), with a single rounding
    return TableScore(p, r, 2 * matched / (n_pred + n_gold))


def score_tables(pred: Table, gold: Table) -> TableScore:
    kp, kg = keyed_cells(pred), keyed_cells(gold)
    matched = sum((kp & kg).values())
    return score_counts(sum(kp.values()), sum(kg.values()), matched)


ZERO = TableScore(0.0, 0.0, 0.0)


def pair_tables(pred: Document, gold: Document) -> list[tuple[Optional[Table], Optional[Table]]]:
    """Match predicted to gold tables by caption, or by position when
    uncaptioned. Unmatched tables on either side pair with ``None``."""
    pairs: list[tuple[Optional[Table], Optional[Table]]] = []
    if all(t.caption is not None for t in gold.tables) and all(t.caption is not None for t in pred.tables):
        by_cap = {t.caption: t for t in pred.tables}
        for g in gold.tables:
            pairs.append((by_cap.pop(g.caption, None), g))
        pairs.extend((t, None) for t in pred.tables if t.caption in by_cap)
        return pairs
    for k in range(max(len(pred.tables), len(gold.tables))):
        pairs.append((pred.tables[k] if k < len(pred.tables) else None,
                      gold.tables[k] if k < len(gold.tables) else None))
    return pairs


def score_documents(pred: Document, gold: Document) -> list[tuple[Optional[str], TableScore]]:
    out = []
    for p, g in pair_tables(pred, gold):
        if g is None:  # extra prediction; grouped under no caption
            out.append((None, ZERO))
        elif p is None:
            out.append((g.caption, ZERO))
        else:
            out.append((g.caption, score_tables(p, g)))
    return out


@dataclass
class CorpusScore:
    precision: float
    recall: float
    f1: float
    error_rate: float
    n_tables: int
    n_sequences: int
    by_caption: dict

    def as_percentages(self) -> dict:
        """Scores as percentage strings with two decimals, e.g. ``"83.36"``."""
        out = {k: f"{100 * getattr(self, k):.2f}" for k in ("precision", "recall", "f1", "error_rate")}
        out["by_caption"] = {
            cap: {k: f"{100 * v:.2f}" for k, v in d.items()} for cap, d in self.by_caption.items()
        }
        return out


def _mean(scores: Sequence[TableScore]) -> tuple[float, float, float]:
    n = max(len(scores), 1)
    return (sum(s.precision for s in scores) / n, sum(s.recall for s in scores) / n,
            sum(s.f1 for s in scores) / n)


def aggregate(per_doc: Sequence[list[tuple[Optional[str], TableScore]]], well_formed: Sequence[bool],
              average: str = "table") -> CorpusScore:
    """Macro-average per table (``average="table"``) or per instance
    (``"instance"``: average the tables of each document first)."""
    flat = [s for doc in per_doc for _, s in doc]
    if average == "table":
        p, r, f = _mean(flat)
    elif average == "instance":
        inst = [TableScore(*_mean([s for _, s in doc])) for doc in per_doc if doc]
        p, r, f = _mean(inst)
    else:
        raise ValueError(f"unknown averaging mode {average!r}")
    groups: dict = {}
    for doc in per_doc:
        for cap, s in doc:
            groups.setdefault(cap if cap is not None else "", []).append(s)
    by_caption = {}
    if len(groups) > 1:
        for cap, ss in sorted(groups.items()):
            gp, gr, gf = _mean(ss)
            by_caption[cap] = {"precision": gp, "recall": gr, "f1": gf}
    n = len(well_formed)
    err = sum(1 for ok in well_formed if not ok) / n if n else 0.0
    return CorpusScore(p, r, f, err, len(flat), n, by_caption)


def score_corpus(v: Vocab, pairs: Iterable[tuple[Sequence[int], Document]],
                 header_mode: HeaderMode | str | Sequence = HeaderMode.BOTH,
                 average: str = "table") -> CorpusScore:
    """Decode each raw sequence (repairing when needed), score it against its
    gold document and macro-average. The error rate counts raw sequences that
    were not well formed before repair."""
    per_doc = []
    flags = []
    for ids, gold in pairs:
        try:
            pred, ok = decode_sequence(v, ids, header_mode)
        except EmptyOutput:
            pred, ok = Document([]), False
        flags.append(ok)
        per_doc.append(score_documents(pred, gold))
    return aggregate(per_doc, flags, average)
