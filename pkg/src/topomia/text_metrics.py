"""Lexical and semantic caption similarity.

Two per-pair similarities are provided:

* ``rouge2_f1`` -- bigram-overlap F1 on normalized word tokens.
* ``cosine_similarity`` of sentence embeddings produced by an
  :class:`EmbeddingProvider`.

The built-in embedder hashes character 3-grams of every token into a signed
bag of ``dimension`` buckets and L2-normalizes the counts. Each 3-gram is hashed
with BLAKE2b (8-byte digest, UTF-8 input) read as a big-endian unsigned 64-bit
integer ``h``; the bucket is ``h % dimension`` and the sign is ``-1`` when the top
bit of ``h`` is set, ``+1`` otherwise. Pre-computed vectors (for example from a
real sentence encoder) can be loaded from a tab-separated file instead.
"""

from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionMismatchError, MissingEmbeddingError, ParseError

BUILTIN = "builtin-hashed-ngram"
PRECOMPUTED = "precomputed-file"
DEFAULT_DIMENSION = 256

_SPLIT = re.compile(r"[\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase ``text`` and split it on runs of non-alphanumeric characters."""
    return [tok for tok in _SPLIT.split(text.lower()) if tok]


def bigrams(tokens: Sequence[str]) -> Counter:
    return Counter(zip(tokens, tokens[1:]))


def rouge2_f1(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """ROUGE-2 F1 between two token sequences.

    Overlap is the clipped bigram count (multiset intersection). Empty bigram
    sets or zero overlap give 0.0.
    """
    cand = bigrams(candidate)
    ref = bigrams(reference)
    if not cand or not ref:
        return 0.0
    overlap = sum((cand & ref).values())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(cand.values())
    recall = overlap / sum(ref.values())
    return 2.0 * precision * recall / (precision + recall)


def char_ngrams(text: str, n: int = 3) -> list[str]:
    grams = []
    for tok in tokenize(text):
        grams.extend(tok[i : i + n] for i in range(len(tok) - n + 1))
    return grams


def _hash64(gram: str) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def hashed_ngram_embedding(text: str, dimension: int = DEFAULT_DIMENSION) -> np.ndarray:
    vec = np.zeros(dimension, dtype=np.float64)
    for gram in char_ngrams(text):
        h = _hash64(gram)
        vec[h % dimension] += -1.0 if h >> 63 else 1.0
    norm = math.sqrt(math.fsum(vec * vec))
    if norm > 0.0:
        vec /= norm
    return vec


@dataclass
class EmbeddingProvider:
    """Source of sentence embeddings.

    Use :meth:`builtin` for the hashed 3-gram embedder or :meth:`from_file` to
    load a table of pre-computed vectors (one ``caption<TAB>v1,v2,...`` per line).
    """

    kind: str = BUILTIN
    dimension: int = DEFAULT_DIMENSION
    source: str | None = None
    _table: dict[str, np.ndarray] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in (BUILTIN, PRECOMPUTED):
            raise ValueError(f"unknown embedding provider kind {self.kind!r}")
        if self.kind == PRECOMPUTED:
            if self.source is None:
                raise ValueError("precomputed-file provider needs a source path")
            if not self._table:
                self._table = load_embedding_table(self.source)
            self.dimension = len(next(iter(self._table.values()))) if self._table else self.dimension
        if self.dimension <= 0:
            raise ValueError("embedding dimension must be positive")

    @classmethod
    def builtin(cls, dimension: int = DEFAULT_DIMENSION) -> "EmbeddingProvider":
        return cls(kind=BUILTIN, dimension=dimension)

    @classmethod
    def from_file(cls, path: str | Path) -> "EmbeddingProvider":
        return cls(kind=PRECOMPUTED, source=str(path))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dimension": self.dimension, "source": self.source}


def load_embedding_table(path: str | Path) -> dict[str, np.ndarray]:
    table: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            text, sep, values = line.rpartition("\t")
            if not sep:
                raise ParseError("expected 'caption<TAB>v1,v2,...'", lineno)
            try:
                vec = np.array([float(v) for v in values.split(",")], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"bad vector component ({exc})", lineno) from None
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise ParseError(f"vector has dimension {len(vec)}, expected {dim}", lineno)
            table[text] = vec
    if not table:
        raise ParseError(f"no embeddings found in {path}")
    return table


def embed(text: str, provider: EmbeddingProvider) -> np.ndarray:
    if provider.kind == BUILTIN:
        return hashed_ngram_embedding(text, provider.dimension)
    try:
        return provider._table[text].copy()
    except KeyError:
        raise MissingEmbeddingError(f"no precomputed embedding for caption {text!r}") from None


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of two vectors; 0.0 when either norm is below 1e-12."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"embedding dimensions differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))
