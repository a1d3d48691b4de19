import pytest

from tblgen.vocab import (BOS, EOS, NL, PAD, SEP, SPECIALS, UNK, EmptyCorpus, UnknownId, Vocab, build_vocab,
                          decode_text, encode_text)


def test_special_ids_are_fixed():
    assert (PAD, BOS, EOS, UNK, SEP, NL) == (0, 1, 2, 3, 4, 5)
    v = build_vocab(["x"])
    assert v.tokens[:6] == SPECIALS


def test_order_is_frequency_then_lexicographic():
    v = build_vocab(["b a c", "c b", "c"])
    assert v.tokens[6:] == ("c", "b", "a")
    v2 = build_vocab(["z y", "y z"])
    assert v2.tokens[6:] == ("y", "z")


def test_min_freq_and_unknowns():
    v = build_vocab(["a a b"], min_freq=2)
    assert "b" not in v
    assert encode_text(v, "a b") == [v.id_of("a"), UNK]
    with pytest.raises(ValueError):
        build_vocab(["a"], min_freq=0)


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        build_vocab(["", "  "])


def test_specials_in_text_are_escaped():
    v = build_vocab(["a <s> <n> b"])
    assert "<s>" not in v.tokens[6:]
    assert encode_text(v, "a <s> b <n>") == [v.id_of("a"), UNK, v.id_of("b"), UNK]


def test_round_trip_and_unknown_id(tmp_path):
    v = build_vocab(["hello world", "world"])
    ids = encode_text(v, "hello  world")
    assert decode_text(v, ids) == "hello world"
    with pytest.raises(UnknownId):
        v.token_of(len(v))
    path = tmp_path / "v.txt"
    v.save(path)
    assert Vocab.load(path) == v


def test_vocab_rejects_bad_token_lists():
    with pytest.raises(ValueError):
        Vocab(("a",))
    with pytest.raises(ValueError):
        Vocab(SPECIALS + ("a", "a"))
