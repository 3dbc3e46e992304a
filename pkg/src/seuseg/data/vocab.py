"""Closed word list for synthetic captions and the tokenizer over it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError

PAD_ID = 0
GLUE_WORDS = ("segment", "the", "in")
SHAPE_WORDS = ("disc", "square", "triangle")
QUADRANT_WORDS = ("upper", "lower", "left", "right")


@dataclass(frozen=True)
class Vocab:
    words: tuple[str, ...] = GLUE_WORDS + SHAPE_WORDS + QUADRANT_WORDS

    def __post_init__(self):
        if len(set(self.words)) != len(self.words) or "" in self.words:
            raise DataError("vocabulary words must be unique and nonempty")

    @property
    def size(self) -> int:
        """Number of ids including the padding id."""
        return len(self.words) + 1

    def id(self, word: str) -> int:
        try:
            return self.words.index(word) + 1
        except ValueError:
            raise DataError(f"unknown word {word!r} (not in vocabulary)") from None

    def word(self, idx: int) -> str:
        if not 1 <= idx <= len(self.words):
            raise DataError(f"token id {idx} is not a word id")
        return self.words[idx - 1]


VOCAB = Vocab()


def tokenize(caption: str, n: int, vocab: Vocab = VOCAB) -> np.ndarray:
    words = caption.split()
    if len(words) > n:
        raise DataError(f"caption has {len(words)} words, more than max_tokens={n}")
    ids = np.zeros(n, dtype=np.int64)
    for i, w in enumerate(words):
        ids[i] = vocab.id(w)
    return ids


def detokenize(ids, vocab: Vocab = VOCAB) -> str:
    return " ".join(vocab.word(int(i)) for i in ids if int(i) != PAD_ID)
