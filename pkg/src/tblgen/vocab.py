"""Word-level vocabulary with fixed special ids."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

PAD, BOS, EOS, UNK, SEP, NL = 0, 1, 2, 3, 4, 5
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>", "<s>", "<n>")
N_SPECIALS = len(SPECIALS)


class EmptyCorpus(ValueError):
    pass


class UnknownId(KeyError):
    pass


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.tokens[:N_SPECIALS] != SPECIALS:
            raise ValueError("vocabulary must start with the six special tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate token in vocabulary")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK)  # type: ignore[attr-defined]

    def token_of(self, i: int) -> str:
        if not 0 <= i < len(self.tokens):
            raise UnknownId(i)
        return self.tokens[i]

    def __contains__(self, token: str) -> bool:
        return token in self._index  # type: ignore[attr-defined]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines))


def build_vocab(corpus: Iterable[str], min_freq: int = 1) -> Vocab:
    """Collect every whitespace token seen at least ``min_freq`` times.

    Ids are assigned by descending frequency, ties broken lexicographically, so
    the same corpus always yields the same vocabulary.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts: Counter[str] = Counter()
    for line in corpus:
        counts.update(line.split())
    if not counts:
        raise EmptyCorpus("corpus contains no tokens")
    for s in SPECIALS:
        counts.pop(s, None)
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocab(SPECIALS + tuple(kept))


def encode_text(v: Vocab, s: str) -> list[int]:
    # special surface forms in raw text are escaped to <unk>
    return [UNK if w in SPECIALS else v.id_of(w) for w in s.split()]


def decode_text(v: Vocab, ids: Sequence[int]) -> str:
    return " ".join(v.token_of(int(i)) for i in ids)
