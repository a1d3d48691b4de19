from collections import Counter

import pytest

from tblgen.codec import encode_document
from tblgen.metrics import (ZERO, KeyedCell, TableScore, aggregate, keyed_cells, pair_tables, score_corpus,
                            score_documents, score_tables)
from tblgen.table import Document, HeaderMode, Table
from tblgen.vocab import BOS, EOS, SEP, build_vocab

G4 = Table([["", "A", "P"], ["x", "5", "17"], ["y", "3", "29"]])
COL = HeaderMode.COL_ONLY
ROWM = HeaderMode.ROW_ONLY

# (pred, gold, precision, recall, f1), all counted by hand
FIXTURES = [
    (G4, G4, 1, 1, 1),
    (Table([["", "A", "P"], ["x", "5", "17"], ["y", "4", ""]]), G4, 2 / 3, 1 / 2, 4 / 7),
    (Table([["", "P", "A"], ["x", "17", "5"], ["y", "29", "3"]]), G4, 1, 1, 1),       # column order is irrelevant
    (Table([["", "A", "P"], ["y", "3", "29"], ["x", "5", "17"]]), G4, 1, 1, 1),       # so is row order
    (Table([["", "A", "P"], ["x", "", ""]]), G4, 0, 0, 0),                            # nothing predicted
    (Table([["", "A"], ["x", ""]]), Table([["", "A"], ["x", ""]]), 1, 1, 1),          # nothing to predict
    (Table([["", "A"], ["x", "1"], ["y", "2"]]), Table([["", "A"], ["x", ""]]), 0, 1, 0),
    (Table([["", "A", "P"], ["z", "5", "17"], ["y", "3", "29"]]), G4, 1 / 2, 1 / 2, 1 / 2),
    (Table([["", "A", "P"], ["x", "5", "17"], ["y", "3", "29"], ["w", "1", "2"]]), G4, 2 / 3, 1, 4 / 5),
    (Table([["", "A"], ["x", "5"]]), Table([["", "A"], ["x", "5"], ["x", "5"]]), 1, 1 / 2, 2 / 3),  # multiset
    (Table([["A", "P"], ["5", "17"], ["3", "30"]], COL), Table([["A", "P"], ["5", "17"], ["3", "29"]], COL),
     3 / 4, 3 / 4, 3 / 4),
    (Table([["x", "17", "5"]], ROWM), Table([["x", "5", "17"]], ROWM), 0, 0, 0),     # columns keyed by index
]


@pytest.mark.parametrize("pred, gold, p, r, f", FIXTURES)
def test_hand_counted_fixtures(pred, gold, p, r, f):
    assert score_tables(pred, gold) == TableScore(p, r, f)


def test_keyed_cells():
    assert keyed_cells(G4) == Counter({KeyedCell("x", "A", "5"): 1, KeyedCell("x", "P", "17"): 1,
                                       KeyedCell("y", "A", "3"): 1, KeyedCell("y", "P", "29"): 1})


def test_pairing_by_caption_and_position():
    a, b = Table([["a"]], caption="A"), Table([["b"]], caption="B")
    assert pair_tables(Document([b, a]), Document([a, b])) == [(a, a), (b, b)]
    c = Table([["c"]], caption="C")
    assert pair_tables(Document([c, a]), Document([a, b])) == [(a, a), (None, b), (c, None)]
    u, w = Table([["u"]]), Table([["w"]])
    assert pair_tables(Document([u]), Document([w])) == [(u, w)]


def test_missing_and_extra_tables_score_zero():
    a, b = Table([["", "A"], ["x", "1"]], caption="A"), Table([["", "A"], ["x", "1"]], caption="B")
    assert score_documents(Document([a]), Document([a, b])) == [("A", TableScore(1, 1, 1)), ("B", ZERO)]
    assert score_documents(Document([a, b]), Document([a])) == [("A", TableScore(1, 1, 1)), (None, ZERO)]


def test_aggregate_table_and_instance_averages():
    per_doc = [[("A", TableScore(1, 1, 1)), ("B", TableScore(0, 0, 0))], [("A", TableScore(0.5, 0.5, 0.5))]]
    by_table = aggregate(per_doc, [True, True], "table")
    assert by_table.f1 == pytest.approx(0.5)
    assert by_table.by_caption["A"]["f1"] == pytest.approx(0.75)
    by_inst = aggregate(per_doc, [True, False], "instance")
    assert by_inst.f1 == pytest.approx(0.5) and by_inst.error_rate == 0.5
    with pytest.raises(ValueError):
        aggregate(per_doc, [True, True], "corpus")


def test_error_rate_is_reported_like_the_paper():
    v = build_vocab(["", "A x 1"])
    gold = Document([Table([["", "A"], ["x", "1"]])])
    good = encode_document(v, gold)
    bad = [BOS, SEP, v.id_of("x"), EOS]  # unclosed cell
    pairs = [(bad if k < 74 else good, gold) for k in range(1000)]
    score = score_corpus(v, pairs)
    assert score.as_percentages()["error_rate"] == "7.40"
    assert score.n_sequences == 1000


def test_percentage_format():
    s = aggregate([[("A", TableScore(0.83364, 0.8, 0.8336))]], [True])
    out = s.as_percentages()
    assert out["precision"] == "83.36" and out["f1"] == "83.36"
