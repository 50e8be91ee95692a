import pytest

from keepfit.tokenizer import (
    CLS,
    MASK,
    PAD,
    SPECIAL_TOKENS,
    UNK,
    Vocabulary,
    detokenize,
    pad_or_truncate,
    tokenize,
)


def test_special_token_ids_are_fixed():
    vocab = Vocabulary()
    assert (PAD, MASK, UNK, CLS) == (0, 1, 2, 3)
    assert vocab.id_to_token[: len(SPECIAL_TOKENS)] == list(SPECIAL_TOKENS)


def test_ids_assigned_by_first_appearance():
    vocab = Vocabulary.from_corpus(["b a", "a c"])
    assert vocab.token_to_id["b"] == len(SPECIAL_TOKENS)
    assert vocab.token_to_id["a"] == len(SPECIAL_TOKENS) + 1
    assert vocab.token_to_id["c"] == len(SPECIAL_TOKENS) + 2


def test_tokenize_prepends_cls():
    vocab = Vocabulary.from_corpus(["a b"])
    ids = tokenize("a b", vocab)
    assert ids[0] == CLS
    assert len(ids) == 3


def test_roundtrip_exact_for_known_tokens():
    text = "a fundus photograph showing a ring lesion"
    vocab = Vocabulary.from_corpus([text])
    assert detokenize(tokenize(text, vocab), vocab) == text


def test_unknown_tokens_map_to_unk():
    vocab = Vocabulary.from_corpus(["known words"])
    ids = tokenize("known mystery", vocab)
    assert ids == [CLS, vocab.token_to_id["known"], UNK]
    assert detokenize(ids, vocab) == "known [UNK]"


def test_detokenize_drops_pad_and_cls():
    vocab = Vocabulary.from_corpus(["x"])
    ids = pad_or_truncate(tokenize("x", vocab), 6)
    assert detokenize(ids, vocab) == "x"


def test_pad_or_truncate():
    assert pad_or_truncate([CLS, 5, 6], 5) == [CLS, 5, 6, PAD, PAD]
    assert pad_or_truncate([CLS, 5, 6, 7], 2) == [CLS, 5]


def test_case_is_preserved():
    vocab = Vocabulary.from_corpus(["Amber amber"])
    assert vocab.token_to_id["Amber"] != vocab.token_to_id["amber"]


def test_save_load_roundtrip(tmp_path):
    vocab = Vocabulary.from_corpus(["some words here", "and more words"])
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    loaded = Vocabulary.load(path)
    assert loaded.id_to_token == vocab.id_to_token
    assert loaded.token_to_id == vocab.token_to_id


def test_load_rejects_bad_header(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text("not\na\nreal\nvocab\n", encoding="utf-8")
    with pytest.raises(ValueError):
        Vocabulary.load(path)
