"""Synthetic game-report corpus and JSONL dataset I/O.

Each record is a short basketball-style report with a team table and a player
table (both headers, stat types as columns, entity names as rows). Text may
refer to entities by an alias, mention facts that do not belong in the tables,
and leave some table facts unmentioned (those cells are empty in the gold).
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .table import Document, Table, non_header_cells, validate_document

TEAMS = [
    ("Celtics", "Boston"), ("Knicks", "New York"), ("Lakers", "Los Angeles"), ("Bulls", "Chicago"),
    ("Heat", "Miami"), ("Spurs", "San Antonio"), ("Suns", "Phoenix"), ("Hawks", "Atlanta"),
    ("Pistons", "Detroit"), ("Nuggets", "Denver"), ("Raptors", "Toronto"), ("Jazz", "Utah"),
]

_FIRST = ["Al", "Isaiah", "Marcus", "Kevin", "Jamal", "Derrick", "Tony", "Chris", "Andre", "Paul",
          "Rajon", "Kyle", "Jimmy", "Dwight", "Eric", "Jeff", "Zach", "Victor", "Evan", "Nick"]
_LAST = ["Horford", "Thomas", "Smart", "Durant", "Crawford", "Rose", "Parker", "Paul", "Drummond", "George",
         "Rondo", "Lowry", "Butler", "Howard", "Bledsoe", "Teague", "Randolph", "Oladipo", "Fournier", "Young",
         "Gordon", "Millsap", "Jackson", "Harris", "Gallinari", "Mudiay", "Valanciunas", "Hayward", "Favors", "Hood",
         "Whiteside", "Dragic", "Aldridge", "Leonard", "Booker", "Knight", "Ibaka", "Morris", "Lopez", "Gasol"]
PLAYERS = [(f"{_FIRST[i % len(_FIRST)]} {last}", last) for i, last in enumerate(_LAST)]

# (column header, phrase used in text, value range)
TEAM_STATS = [
    ("Points", "points", (80, 125)),
    ("Rebounds", "rebounds", (30, 55)),
    ("Assists", "assists", (15, 32)),
    ("Turnovers", "turnovers", (8, 20)),
]
PLAYER_STATS = [
    ("Points", "points", (0, 40)),
    ("Assists", "assists", (0, 14)),
    ("Total rebounds", "rebounds", (0, 16)),
    ("Steals", "steals", (0, 5)),
    ("Blocks", "blocks", (0, 5)),
    ("Minutes played", "minutes", (10, 42)),
    ("Personal fouls", "fouls", (0, 6)),
]

_PLAYER_OPEN = ["{n} had", "{n} finished with", "{n} recorded", "{n} contributed", "{n} posted"]
_PLAYER_MORE = ["{n} also added", "{n} chipped in", "{n} also had"]
_TEAM_OPEN = ["The {n} totaled", "The {n} finished with", "The {n} combined for", "The {n} recorded"]
_DISTRACT = [
    "{n} had {v} {s} in the previous game .",
    "{n} is averaging {v} {s} this season .",
    "{n} scored {v} {s} against them last month .",
]
_BARE = ["{n} also saw action .", "{n} came off the bench ."]
_OUTSIDER = ["{n} did not play due to injury .", "{n} sat out with a sore knee ."]


class ParseError(ValueError):
    def __init__(self, line: int, msg: str) -> None:
        super().__init__(f"line {line}: {msg}")
        self.line = line


class IoFailure(OSError):
    pass


@dataclass
class SynthConfig:
    n_examples: int = 1000
    n_entities_range: tuple[int, int] = (2, 4)
    n_stat_types_range: tuple[int, int] = (2, 4)
    n_team_stat_types_range: tuple[int, int] = (2, 3)
    distractor_sentence_rate: float = 0.3
    synonym_rate: float = 0.3
    omission_rate: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("distractor_sentence_rate", "synonym_rate", "omission_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name, pool in (("n_entities_range", PLAYERS), ("n_stat_types_range", PLAYER_STATS),
                           ("n_team_stat_types_range", TEAM_STATS)):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi <= len(pool):
                raise ValueError(f"{name} must satisfy 1 <= lo <= hi <= {len(pool)}")


@dataclass
class TableRecord:
    rows: list[list[str]]
    header_mode: str = "both"
    caption: Optional[str] = None

    def to_table(self) -> Table:
        return Table(self.rows, self.header_mode, self.caption)


@dataclass
class DatasetRecord:
    text: str
    tables: list[TableRecord] = field(default_factory=list)

    def document(self) -> Document:
        return Document(t.to_table() for t in self.tables)

    def to_json(self) -> dict:
        return {"text": self.text,
                "tables": [{"caption": t.caption, "header_mode": t.header_mode, "rows": t.rows}
                           for t in self.tables]}


def _phrase_list(parts: list[str]) -> str:
    if len(parts) == 1:
        return parts[0]
    return " , ".join(parts[:-1]) + " and " + parts[-1]


def _entity_sentences(rng: random.Random, name: str, alias: str, facts: list[tuple[str, int]],
                      cfg: SynthConfig, team: bool) -> list[str]:
    def ref() -> str:
        return alias if rng.random() < cfg.synonym_rate else name

    if not facts:
        return [rng.choice(_BARE).format(n=ref())]
    chunks = [facts]
    if len(facts) > 2 and rng.random() < 0.5:
        cut = rng.randint(1, len(facts) - 1)
        chunks = [facts[:cut], facts[cut:]]
    out = []
    for k, chunk in enumerate(chunks):
        parts = [f"{v} {phrase}" for phrase, v in chunk]
        if team:
            opener = rng.choice(_TEAM_OPEN)
        else:
            opener = rng.choice(_PLAYER_OPEN if k == 0 else _PLAYER_MORE)
        out.append(f"{opener.format(n=ref())} {_phrase_list(parts)} .")
    return out


def _distractor(rng: random.Random, name: str, stats) -> str:
    _, phrase, (lo, hi) = rng.choice(stats)
    return rng.choice(_DISTRACT).format(n=name, v=rng.randint(lo, hi), s=phrase)


def _make_record(rng: random.Random, cfg: SynthConfig) -> DatasetRecord:
    teams = rng.sample(TEAMS, 2)
    n_ts = rng.randint(*cfg.n_team_stat_types_range)
    team_stats = sorted(rng.sample(range(len(TEAM_STATS)), n_ts))
    players = rng.sample(PLAYERS, rng.randint(*cfg.n_entities_range))
    n_ps = rng.randint(*cfg.n_stat_types_range)
    player_stats = sorted(rng.sample(range(len(PLAYER_STATS)), n_ps))

    # (sentences, entity key) blocks; each block mentions exactly one entity
    blocks: list[tuple[list[str], Optional[tuple[str, str]]]] = []
    values: dict[tuple[str, str], dict[int, str]] = {}

    def add_entity(kind: str, name: str, alias: str, stat_ids, pool, is_team: bool) -> None:
        cells: dict[int, str] = {}
        facts = []
        for s in stat_ids:
            _, phrase, (lo, hi) = pool[s]
            v = rng.randint(lo, hi)
            if rng.random() < cfg.omission_rate:
                continue
            cells[s] = str(v)
            facts.append((phrase, v))
        values[(kind, name)] = cells
        blocks.append((_entity_sentences(rng, name, alias, facts, cfg, is_team), (kind, name)))
        if rng.random() < cfg.distractor_sentence_rate:
            ref = alias if rng.random() < cfg.synonym_rate else name
            blocks.append(([_distractor(rng, ref, pool)], (kind, name)))

    for name, alias in teams:
        add_entity("team", name, alias, team_stats, TEAM_STATS, True)
    for name, alias in players:
        add_entity("player", name, alias, player_stats, PLAYER_STATS, False)
    if rng.random() < cfg.distractor_sentence_rate:
        outsider = rng.choice([p for p in PLAYERS if p not in players])
        blocks.append(([rng.choice(_OUTSIDER).format(n=outsider[0])], None))

    sentences = [(s, key) for sents, key in blocks for s in sents]
    rng.shuffle(sentences)
    order: list[tuple[str, str]] = []
    for _, key in sentences:
        if key is not None and key not in order:
            order.append(key)

    def build(kind: str, caption: str, stat_ids, pool) -> TableRecord:
        rows = [[""] + [pool[s][0] for s in stat_ids]]
        for key in order:
            if key[0] == kind:
                rows.append([key[1]] + [values[key].get(s, "") for s in stat_ids])
        return TableRecord(rows, "both", caption)

    text = " ".join(s for s, _ in sentences)
    return DatasetRecord(text, [build("team", "Team", team_stats, TEAM_STATS),
                                build("player", "Player", player_stats, PLAYER_STATS)])


def generate_corpus(cfg: SynthConfig) -> list[DatasetRecord]:
    rng = random.Random(cfg.seed)
    return [_make_record(rng, cfg) for _ in range(cfg.n_examples)]


def _record_from_json(obj, line: int) -> DatasetRecord:
    if not isinstance(obj, dict):
        raise ParseError(line, "record is not an object")
    if not isinstance(obj.get("text"), str):
        raise ParseError(line, 'missing or non-string "text" field')
    tables = obj.get("tables")
    if not isinstance(tables, list):
        raise ParseError(line, 'missing or non-list "tables" field')
    out = []
    for k, t in enumerate(tables):
        if not isinstance(t, dict) or not isinstance(t.get("rows"), list):
            raise ParseError(line, f"table {k} lacks a rows array")
        mode = t.get("header_mode", "both")
        if mode not in ("both", "col", "row"):
            raise ParseError(line, f"table {k} has unknown header_mode {mode!r}")
        cap = t.get("caption")
        if cap is not None and not isinstance(cap, str):
            raise ParseError(line, f"table {k} caption must be a string or null")
        rows = t["rows"]
        if not all(isinstance(r, list) and all(isinstance(c, str) for c in r) for r in rows):
            raise ParseError(line, f"table {k} rows must be arrays of strings")
        out.append(TableRecord([list(r) for r in rows], mode, cap))
    rec = DatasetRecord(obj["text"], out)
    if out:
        violations = validate_document(rec.document())
        if violations:
            raise ParseError(line, f"invalid tables: {violations}")
    return rec


def save_dataset(records: Iterable[DatasetRecord], path: str | Path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for r in records:
                fh.write(json.dumps(r.to_json(), ensure_ascii=False) + "\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_dataset(path: str | Path) -> list[DatasetRecord]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    out = []
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(n, f"invalid JSON ({exc.msg})") from exc
        out.append(_record_from_json(obj, n))
    return out


def corpus_stats(records: list[DatasetRecord]) -> dict:
    """Per-caption mean rows, mean columns, mean non-empty cells and their
    ratio, plus mean text tokens per instance."""
    groups: dict[str, list[Table]] = {}
    for r in records:
        for t in r.document().tables:
            groups.setdefault(t.caption or "", []).append(t)
    out: dict = {"instances": len(records),
                 "tokens": sum(len(r.text.split()) for r in records) / max(len(records), 1),
                 "tables": {}}
    for cap, ts in sorted(groups.items()):
        n = len(ts)
        cells = [sum(1 for i, j in non_header_cells(t) if t.cell(i, j)) for t in ts]
        slots = [sum(1 for _ in non_header_cells(t)) for t in ts]
        out["tables"][cap] = {
            "rows": sum(t.n_rows for t in ts) / n,
            "columns": sum(t.n_cols for t in ts) / n,
            "cells": sum(cells) / n,
            "non_empty_ratio": sum(cells) / max(sum(slots), 1),
        }
    return out
