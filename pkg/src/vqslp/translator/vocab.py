"""Source word vocabulary and target token vocabulary with fixed reserved ids."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from ..errors import DataError, TokenRangeError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")


def split_words(text: str | Iterable[str]) -> list[str]:
    """Whitespace word split with lowercasing; lists are lowercased element-wise."""
    if isinstance(text, str):
        return text.lower().split()
    return [w.lower() for w in text]


class Vocab:
    """Bijective symbol <-> index map; ids 0-3 are always PAD, BOS, EOS, UNK."""

    def __init__(self, symbols: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {s: i for i, s in enumerate(self.itos)}
        for s in symbols:
            self.add(s)

    def add(self, symbol: str) -> int:
        if symbol not in self.stoi:
            self.stoi[symbol] = len(self.itos)
            self.itos.append(symbol)
        return self.stoi[symbol]

    @classmethod
    def build(cls, sentences: Iterable[Iterable[str]]) -> "Vocab":
        """Vocabulary of every word seen, in sorted order so it does not depend on corpus order."""
        words = sorted({w for s in sentences for w in split_words(s)})
        clash = [w for w in words if w in RESERVED]
        if clash:
            raise DataError(f"source words collide with reserved symbols: {clash}")
        return cls(words)

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def encode(self, words) -> list[int]:
        return [self.stoi.get(w, UNK) for w in split_words(words)]

    def decode(self, ids) -> list[str]:
        return [self.itos[i] for i in ids]

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.itos, indent=0) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "Vocab":
        itos = json.loads(Path(path).read_text())
        if tuple(itos[:4]) != RESERVED:
            raise DataError(f"{path}: reserved symbols are not at ids 0-3")
        if len(set(itos)) != len(itos):
            raise DataError(f"{path}: duplicate symbols")
        return cls(itos[4:])


class TargetVocab:
    """Codebook token k is id k + 4; ids below 4 are the reserved symbols."""

    def __init__(self, n_tokens: int):
        if n_tokens < 1:
            raise ValueError("need at least one codebook token")
        self.n_tokens = n_tokens

    def __len__(self):
        return self.n_tokens + len(RESERVED)

    def encode(self, tokens) -> list[int]:
        out = []
        for pos, t in enumerate(tokens):
            t = int(t)
            if not 0 <= t < self.n_tokens:
                raise TokenRangeError(pos, t, self.n_tokens)
            out.append(t + len(RESERVED))
        return out

    def decode(self, ids) -> list[int]:
        return [int(i) - len(RESERVED) for i in ids if int(i) >= len(RESERVED)]
