"""Word-level tokenizer with a corpus-built vocabulary.

Tokens are whitespace-separated word forms kept verbatim, so detokenization is
exact for in-vocabulary text. Special ids: PAD=0, MASK=1, UNK=2, CLS=3; every
encoded sequence starts with CLS.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

PAD, MASK, UNK, CLS = 0, 1, 2, 3
SPECIAL_TOKENS = ("[PAD]", "[MASK]", "[UNK]", "[CLS]")


class Vocabulary:
    """Token <-> id mapping; ids are assigned by first appearance in the corpus."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.id_to_token: list[str] = list(SPECIAL_TOKENS)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.token_to_id:
            self.token_to_id[token] = len(self.id_to_token)
            self.id_to_token.append(token)
        return self.token_to_id[token]

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @classmethod
    def from_corpus(cls, utterances: Iterable[str]) -> "Vocabulary":
        vocab = cls()
        for line in utterances:
            for tok in line.split():
                vocab.add(tok)
        return vocab

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for tok in self.id_to_token:
                fh.write(tok)
                fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.strip()]
        if tokens[: len(SPECIAL_TOKENS)] != list(SPECIAL_TOKENS):
            raise ValueError(f"vocabulary file {path} does not start with {SPECIAL_TOKENS}")
        return cls(tokens[len(SPECIAL_TOKENS):])


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Encode text as [CLS] + word ids; out-of-vocabulary words become UNK."""
    return [CLS] + [vocab.token_to_id.get(tok, UNK) for tok in text.split()]


def detokenize(ids: Iterable[int], vocab: Vocabulary) -> str:
    """Inverse of tokenize up to UNK substitutions; drops CLS/PAD."""
    words = []
    for i in ids:
        if i in (CLS, PAD):
            continue
        words.append(vocab.id_to_token[i])
    return " ".join(words)


def pad_or_truncate(ids: list[int], max_tokens: int) -> list[int]:
    """Clip to max_tokens then right-pad with PAD to exactly max_tokens."""
    ids = ids[:max_tokens]
    return ids + [PAD] * (max_tokens - len(ids))
