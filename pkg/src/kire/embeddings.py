"""Pretrained word/character embedding tables and the OOV-robust lookup."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from kire.errors import EmbeddingFormatError

logger = logging.getLogger(__name__)


@dataclass
class EmbeddingTable:
    kind: str  # word | char
    dim: Optional[int] = None
    vectors: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self):
        return len(self.vectors)

    def __contains__(self, token):
        return token in self.vectors

    def __getitem__(self, token) -> np.ndarray:
        return self.vectors[token]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok, vec in self.vectors.items():
                fh.write(tok + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def load_embeddings(path, kind: str = "word") -> EmbeddingTable:
    """Read a GloVe-style text file: a token followed by ``d`` decimals per line."""
    table = EmbeddingTable(kind)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if not parts or parts == [""]:
                continue
            tok, values = parts[0], parts[1:]
            try:
                vec = np.asarray([float(v) for v in values], dtype=np.float64)
            except ValueError:
                raise EmbeddingFormatError(f"{path}:{lineno}: non-numeric value") from None
            if table.dim is None:
                if not len(vec):
                    raise EmbeddingFormatError(f"{path}:{lineno}: no vector values")
                table.dim = len(vec)
            elif len(vec) != table.dim:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected {table.dim} values, found {len(vec)}")
            if tok in table.vectors:
                logger.warning("%s:%d: duplicate token %r, keeping the last vector", path, lineno, tok)
            table.vectors[tok] = vec
    return table


def check_compatible(words: EmbeddingTable, chars: EmbeddingTable) -> int:
    if words.dim is None and chars.dim is None:
        raise EmbeddingFormatError("lookup on empty embedding tables")
    dims = {d for d in (words.dim, chars.dim) if d is not None}
    if len(dims) != 1:
        raise EmbeddingFormatError(f"word and char dimensions differ: {words.dim} vs {chars.dim}")
    return dims.pop()


def lookup(token: str, words: EmbeddingTable, chars: EmbeddingTable) -> np.ndarray:
    """Word vector if known, else the mean of character vectors (unknown chars count as zero)."""
    dim = check_compatible(words, chars)
    if token in words.vectors:
        return words.vectors[token]
    out = np.zeros(dim)
    if not token:
        return out
    for ch in token:
        vec = chars.vectors.get(ch)
        if vec is not None:
            out += vec
    return out / len(token)


def random_tables(tokens: Iterable[str], dim: int, seed: int) -> tuple[EmbeddingTable, EmbeddingTable]:
    """Deterministic random word/char tables covering ``tokens``; stand-ins for GloVe/Skip-gram."""
    rng = np.random.default_rng(seed)
    vocab = sorted(set(tokens))
    charset = sorted({c for t in vocab for c in t})
    words = EmbeddingTable("word", dim, {t: rng.normal(0.0, 1.0, dim) / np.sqrt(dim) for t in vocab})
    chars = EmbeddingTable("char", dim, {c: rng.normal(0.0, 1.0, dim) / np.sqrt(dim) for c in charset})
    return words, chars
