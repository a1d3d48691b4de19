"""Greedy and beam-search generation with the table constraint.

The constraint is a small automaton over the generated prefix: the first row
of each table fixes the cell count, every later row must close exactly that
many cells, and ``<n>``/``<eos>`` may only follow a separator. On top of the
row rules the automaton enforces the caption/row line grammar of the codec and
a length budget, so that anything it lets through parses as a well-formed
document even when generation is cut by ``max_len``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .codec import EmptyOutput, decode_sequence
from .model.layers import log_softmax
from .model.transformer import Params, Seq2Seq, pad_batch
from .relation import RelationState
from .table import Document, HeaderMode, Table
from .vocab import BOS, EOS, NL, PAD, SEP, Vocab


class Phase(enum.Enum):
    FIRST_ROW = "first_row"
    BODY_ROW = "body_row"
    CAPTION = "caption"


class DisallowedToken(ValueError):
    pass


class NoValidToken(RuntimeError):
    pass


@dataclass(frozen=True)
class ConstraintState:
    phase: Phase = Phase.FIRST_ROW
    n_c: Optional[int] = None
    cells_in_row: int = 0
    last_token_was_sep: bool = False
    line_start: bool = True
    doc_start: bool = True
    captioned: bool = False
    ended: bool = False
    captions: tuple = ()
    caption: tuple = ()
    allow_captions: bool = True


def _kinds(st: ConstraintState) -> tuple[bool, bool, bool, bool]:
    """Which token classes are allowed: (sep, newline, eos, word)."""
    if st.ended:
        return False, False, False, False
    if st.line_start:
        may_caption = st.allow_captions and (st.doc_start or (st.captioned and st.phase is Phase.BODY_ROW))
        return True, False, False, may_caption
    if st.phase is Phase.CAPTION:
        return False, st.caption not in st.captions, False, True
    if st.phase is Phase.FIRST_ROW:
        closable = st.last_token_was_sep and st.cells_in_row >= 1
        return True, closable, closable, True
    if st.cells_in_row >= st.n_c:
        return False, True, True, False
    return True, False, False, True


def _advance(st: ConstraintState, tok: int) -> ConstraintState:
    if tok == EOS:
        return replace(st, ended=True, line_start=False)
    if st.line_start:
        if tok == SEP:
            return replace(st, line_start=False, doc_start=False, cells_in_row=0, last_token_was_sep=True)
        return replace(st, phase=Phase.CAPTION, line_start=False, captioned=True, doc_start=False,
                       caption=(tok,), last_token_was_sep=False)
    if st.phase is Phase.CAPTION:
        if tok == NL:
            return replace(st, phase=Phase.FIRST_ROW, n_c=None, line_start=True,
                           captions=st.captions + (st.caption,), caption=())
        return replace(st, caption=st.caption + (tok,))
    if tok == SEP:
        return replace(st, cells_in_row=st.cells_in_row + 1, last_token_was_sep=True)
    if tok == NL:
        n_c = st.cells_in_row if st.phase is Phase.FIRST_ROW else st.n_c
        return replace(st, phase=Phase.BODY_ROW, n_c=n_c, cells_in_row=0, line_start=True,
                       last_token_was_sep=False)
    return replace(st, last_token_was_sep=False)


def min_completion(st: ConstraintState) -> int:
    """Fewest tokens (``<eos>`` included) that bring ``st`` to a finished,
    well-formed sequence."""
    if st.ended:
        return 0
    if st.line_start:
        if st.phase is Phase.BODY_ROW:
            return st.n_c + 2
        return 3  # <s> <s> <eos>
    if st.phase is Phase.CAPTION:
        return 4 + (st.caption in st.captions)
    if st.phase is Phase.FIRST_ROW:
        return 1 if (st.last_token_was_sep and st.cells_in_row >= 1) else 2
    return st.n_c - st.cells_in_row + 1


def constraint_mask(st: ConstraintState, vocab_size: int, remaining: Optional[int] = None) -> np.ndarray:
    """Boolean mask of allowed next tokens.

    ``remaining`` is the number of tokens still available before the length
    limit; when given, tokens after which the sequence could no longer be
    closed in time are removed.
    """
    sep, nl, eos, word = _kinds(st)
    mask = np.zeros(vocab_size, dtype=bool)
    if word:
        mask[:] = True
        mask[[PAD, BOS, EOS, SEP, NL]] = False
    mask[SEP] = sep
    mask[NL] = nl
    mask[EOS] = eos
    if remaining is not None:
        for tok, ok in ((SEP, sep), (NL, nl), (EOS, eos)):
            if ok and min_completion(_advance(st, tok)) > remaining - 1:
                mask[tok] = False
        if word:
            # any fresh word works as a representative; pick one not already
            # closing a duplicate caption
            probe = _advance(st, vocab_size + 1)
            if min_completion(probe) > remaining - 1:
                mask[[i for i in range(vocab_size) if i not in (SEP, NL, EOS)]] = False
            elif st.phase is Phase.CAPTION or st.line_start:
                # words that would recreate an earlier caption need one extra token
                prefix = st.caption if st.phase is Phase.CAPTION and not st.line_start else ()
                for cap in st.captions:
                    if len(cap) == len(prefix) + 1 and cap[:-1] == prefix:
                        if min_completion(_advance(st, cap[-1])) > remaining - 1:
                            mask[cap[-1]] = False
    return mask


def constraint_allows(st: ConstraintState, tok: int) -> bool:
    sep, nl, eos, word = _kinds(st)
    if tok == SEP:
        return sep
    if tok == NL:
        return nl
    if tok == EOS:
        return eos
    if tok in (PAD, BOS):
        return False
    return word


def constraint_advance(st: ConstraintState, tok: int) -> ConstraintState:
    tok = int(tok)
    if not constraint_allows(st, tok):
        raise DisallowedToken(f"token {tok} not allowed in state {st}")
    return _advance(st, tok)


@dataclass
class GenerateOptions:
    constraint: bool = True
    tre: bool = False
    beam: int = 0                  # 0 -> greedy, >= 1 -> beam search of that width
    max_len: int = 512
    temperature: float = 0.0       # > 0 samples instead of taking the argmax
    length_penalty: float = 0.0    # beam only; 0 disables normalization
    header_mode: HeaderMode = HeaderMode.BOTH
    allow_captions: bool = True
    seed: int = 0


@dataclass
class Generation:
    ids: list[int]
    well_formed: bool
    document: Document
    score: float = 0.0


def _finish(v: Vocab, ids: list[int], mode) -> Generation:
    try:
        doc, ok = decode_sequence(v, ids, mode)
    except EmptyOutput:
        doc, ok = Document([Table([[""]], mode)]), False
    return Generation(ids, ok, doc)


def _masked_logp(logits, states, opts: GenerateOptions, lengths, rng):
    """Log-probabilities after temperature, hygiene mask and constraint mask,
    renormalized over the allowed set."""
    x = logits.astype(np.float64)
    if opts.temperature > 0:
        x = x / opts.temperature
    V = x.shape[-1]
    allowed = np.ones(x.shape, dtype=bool)
    allowed[:, [PAD, BOS]] = False
    if opts.constraint:
        for r, st in enumerate(states):
            allowed[r] &= constraint_mask(st, V, opts.max_len - lengths[r])
    if not allowed.any(-1).all():
        raise NoValidToken("constraint removed every candidate")
    x = np.where(allowed, x, -np.inf)
    return log_softmax(x)


def _rel_rows(rstates, tokens, t):
    rows = np.zeros((len(tokens), t + 1), dtype=np.int8)
    for r, (st, tok) in enumerate(zip(rstates, tokens)):
        for j, lab in st.step(int(tok), t):
            rows[r, j] = lab
    return rows


def generate_batch(model: Seq2Seq, p: Params, sources: Sequence[Sequence[int]], opts: GenerateOptions,
                   vocab: Vocab) -> list[Generation]:
    """Greedy (or temperature-sampled) decoding of several sources at once."""
    if opts.beam >= 1:
        return [beam_search(model, p, s, opts, vocab) for s in sources]
    rng = np.random.default_rng(opts.seed)
    max_len = min(opts.max_len, model.cfg.max_len)
    opts = replace(opts, max_len=max_len)
    src, src_mask = pad_batch([list(s) for s in sources])
    st = model.start(p, src, src_mask)
    n = len(sources)
    outs = [[BOS] for _ in range(n)]
    cstates = [ConstraintState(allow_captions=opts.allow_captions) for _ in range(n)]
    rstates = [RelationState(opts.header_mode) for _ in range(n)]
    active = list(range(n))
    t = 0
    while active and t < max_len:
        last = np.array([outs[i][-1] for i in active])
        rel = _rel_rows([rstates[i] for i in active], last, t) if opts.tre else None
        logits = model.step(p, st, last, rel, opts.tre)
        logp = _masked_logp(logits, [cstates[i] for i in active], opts,
                            [len(outs[i]) - 1 for i in active], rng)
        if opts.temperature > 0:
            probs = np.exp(logp)
            choice = [int(rng.choice(probs.shape[1], p=row / row.sum())) for row in probs]
        else:
            choice = [int(c) for c in logp.argmax(-1)]
        keep = []
        for r, (i, tok) in enumerate(zip(active, choice)):
            outs[i].append(tok)
            if opts.constraint:
                cstates[i] = constraint_advance(cstates[i], tok)
            if tok != EOS:
                keep.append(r)
        t += 1
        if len(keep) < len(active):
            active = [active[r] for r in keep]
            if active:
                st = st.select(keep)
    return [_finish(vocab, o, opts.header_mode) for o in outs]


@dataclass
class _Hyp:
    ids: list[int]
    score: float
    cstate: ConstraintState
    rstate: RelationState = field(default_factory=RelationState)


def beam_search(model: Seq2Seq, p: Params, source: Sequence[int], opts: GenerateOptions,
                vocab: Vocab) -> Generation:
    """Beam search; every hypothesis owns its constraint and relation state."""
    width = max(1, opts.beam)
    max_len = min(opts.max_len, model.cfg.max_len)
    opts = replace(opts, max_len=max_len)
    src, src_mask = pad_batch([list(source)])
    st = model.start(p, src, src_mask)
    hyps = [_Hyp([BOS], 0.0, ConstraintState(allow_captions=opts.allow_captions), RelationState(opts.header_mode))]
    finished: list[_Hyp] = []

    def final(h: _Hyp) -> float:
        if opts.length_penalty:
            return h.score / (len(h.ids) - 1) ** opts.length_penalty
        return h.score

    t = 0
    while hyps and t < max_len:
        last = np.array([h.ids[-1] for h in hyps])
        rel = _rel_rows([h.rstate for h in hyps], last, t) if opts.tre else None
        logits = model.step(p, st, last, rel, opts.tre)
        logp = _masked_logp(logits, [h.cstate for h in hyps], opts, [len(h.ids) - 1 for h in hyps], None)
        cand = (np.array([h.score for h in hyps])[:, None] + logp).reshape(-1)
        order = np.argsort(-cand, kind="stable")
        V = logp.shape[1]
        new: list[_Hyp] = []
        parents: list[int] = []
        for flat in order:
            score = float(cand[flat])
            if score == -np.inf or len(new) >= width:
                break
            r, tok = divmod(int(flat), V)
            h = hyps[r]
            cst = constraint_advance(h.cstate, tok) if opts.constraint else h.cstate
            child = _Hyp(h.ids + [tok], score, cst, h.rstate.copy() if opts.tre else h.rstate)
            if tok == EOS:
                finished.append(child)
                if len(finished) >= width:
                    break
            else:
                new.append(child)
                parents.append(r)
        t += 1
        finished.sort(key=final, reverse=True)
        if len(finished) >= width:
            finished = finished[:width]
            if not opts.length_penalty and (not new or finished[-1].score >= max(h.score for h in new)):
                break
        hyps = new
        if hyps:
            st = st.select(parents)
    pool = finished + hyps
    best = max(pool, key=final) if not finished else max(finished, key=final)
    gen = _finish(vocab, best.ids, opts.header_mode)
    gen.score = best.score
    return gen


def generate(model: Seq2Seq, p: Params, source: Sequence[int], opts: GenerateOptions,
             vocab: Vocab) -> Generation:
    if opts.beam >= 1:
        return beam_search(model, p, source, opts, vocab)
    return generate_batch(model, p, [source], opts, vocab)[0]
