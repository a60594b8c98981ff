"""Tokenization and TF-IDF features.

idf(t) = ln((1 + N) / (1 + df(t))) + 1, tf is the raw count, rows are
L2-normalized. Vocabulary indices follow lexicographic token order.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

_TOKEN_RE = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _ngrams(tokens: list[str], ngram_range: tuple[int, int]) -> list[str]:
    lo, hi = ngram_range
    if (lo, hi) == (1, 1):
        return tokens
    out = []
    for n in range(lo, hi + 1):
        out.extend(" ".join(tokens[i:i + n]) for i in range(len(tokens) - n + 1))
    return out


@dataclass(frozen=True)
class TfIdfConfig:
    lowercase: bool = True
    ngram_range: tuple[int, int] = (1, 1)
    min_df: int = 2

    def to_dict(self) -> dict:
        return {"lowercase": self.lowercase, "ngram_range": list(self.ngram_range),
                "min_df": self.min_df}

    @classmethod
    def from_dict(cls, d: dict) -> "TfIdfConfig":
        return cls(lowercase=d["lowercase"], ngram_range=tuple(d["ngram_range"]),
                   min_df=d["min_df"])


@dataclass(frozen=True)
class SparseVector:
    indices: np.ndarray
    values: np.ndarray
    dim: int

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.values, self.values)))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    def as_row(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, self.indices, [0, len(self.indices)]),
                             shape=(1, self.dim))


class TfIdfModel:
    def __init__(self, vocabulary: dict[str, int], idf: np.ndarray, config: TfIdfConfig):
        self.vocabulary = vocabulary
        self.idf = np.asarray(idf, dtype=float)
        self.config = config

    @property
    def dim(self) -> int:
        return len(self.vocabulary)

    def terms(self, text: str) -> list[str]:
        toks = tokenize(text) if self.config.lowercase else _TOKEN_RE.findall(text)
        return _ngrams(toks, self.config.ngram_range)

    def transform(self, text: str) -> SparseVector:
        counts = Counter(t for t in self.terms(text) if t in self.vocabulary)
        if not counts:
            return SparseVector(np.zeros(0, dtype=np.int64), np.zeros(0), self.dim)
        pairs = sorted((self.vocabulary[t], c) for t, c in counts.items())
        idx = np.array([i for i, _ in pairs], dtype=np.int64)
        raw = np.array([c for _, c in pairs], dtype=float) * self.idf[idx]
        return SparseVector(idx, raw / np.sqrt(np.dot(raw, raw)), self.dim)

    def transform_many(self, texts: Iterable[str]) -> sp.csr_matrix:
        indptr = [0]
        indices: list[np.ndarray] = []
        values: list[np.ndarray] = []
        for text in texts:
            v = self.transform(text)
            indices.append(v.indices)
            values.append(v.values)
            indptr.append(indptr[-1] + len(v.indices))
        data = np.concatenate(values) if values else np.zeros(0)
        ind = np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64)
        return sp.csr_matrix((data, ind, np.array(indptr)), shape=(len(indptr) - 1, self.dim))

    def to_dict(self) -> dict:
        terms = sorted(self.vocabulary, key=self.vocabulary.__getitem__)
        return {"config": self.config.to_dict(), "terms": terms,
                "idf": [float(x) for x in self.idf]}

    @classmethod
    def from_dict(cls, d: dict) -> "TfIdfModel":
        vocab = {t: i for i, t in enumerate(d["terms"])}
        return cls(vocab, np.array(d["idf"], dtype=float), TfIdfConfig.from_dict(d["config"]))


def fit_vocabulary(train_texts: Sequence[str], config: TfIdfConfig = TfIdfConfig()) -> TfIdfModel:
    """Fit vocabulary and idf weights on the training texts only."""
    if not train_texts:
        raise ValueError("cannot fit TF-IDF on an empty corpus")
    df: Counter[str] = Counter()
    probe = TfIdfModel({}, np.zeros(0), config)
    for text in train_texts:
        df.update(set(probe.terms(text)))
    kept = sorted(t for t, c in df.items() if c >= config.min_df)
    if not kept:
        raise ValueError(f"empty vocabulary after min_df={config.min_df} filtering")
    n = len(train_texts)
    idf = np.array([math.log((1 + n) / (1 + df[t])) + 1.0 for t in kept])
    return TfIdfModel({t: i for i, t in enumerate(kept)}, idf, config)
