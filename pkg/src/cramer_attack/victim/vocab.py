"""Token vocabulary with the CTC blank at index 0."""

from __future__ import annotations

import string
from dataclasses import dataclass

BLANK = 0
BLANK_SYMBOL = "<b>"


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...] = (BLANK_SYMBOL, *string.ascii_lowercase, " ")

    def __post_init__(self):
        toks = tuple(self.tokens)
        object.__setattr__(self, "tokens", toks)
        if not toks or toks[0] != BLANK_SYMBOL:
            raise ValueError("the blank symbol must sit at index 0")
        if toks.count(BLANK_SYMBOL) != 1:
            raise ValueError("blank symbol must appear exactly once")
        if len(set(toks)) != len(toks):
            raise ValueError("vocabulary tokens must be unique")
        for tok in toks[1:]:
            if len(tok) != 1:
                raise ValueError(f"non-blank tokens must be single characters, got {tok!r}")

    def __len__(self):
        return len(self.tokens)

    @property
    def num_symbols(self) -> int:
        """Number of non-blank tokens."""
        return len(self.tokens) - 1

    def encode(self, text: str) -> tuple[int, ...]:
        index = {tok: i for i, tok in enumerate(self.tokens)}
        try:
            return tuple(index[ch] for ch in text if ch != BLANK_SYMBOL)
        except KeyError as exc:
            raise ValueError(f"character {exc.args[0]!r} is not in the vocabulary") from None

    def decode(self, ids) -> str:
        self.validate(ids)
        return "".join(self.tokens[i] for i in ids)

    def validate(self, ids) -> tuple[int, ...]:
        ids = tuple(int(i) for i in ids)
        for i in ids:
            if not 0 < i < len(self.tokens):
                raise ValueError(f"token id {i} is not a non-blank id of this vocabulary")
        return ids
