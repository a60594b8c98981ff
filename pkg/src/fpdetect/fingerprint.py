"""Document-frequency shifts of tokens between original and polished text."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .vectorize import TfIdfConfig, TfIdfModel


@dataclass(frozen=True)
class ShiftRow:
    word: str
    frac_original: float
    frac_polished: float

    @property
    def shift(self) -> float:
        return self.frac_polished - self.frac_original


@dataclass
class ShiftTable:
    rows: dict[str, ShiftRow]
    n_original: int
    n_polished: int

    def __getitem__(self, word: str) -> ShiftRow:
        return self.rows.get(word, ShiftRow(word, 0.0, 0.0))

    def shift(self, word: str) -> float:
        return self[word].shift

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["word", "frac_original", "frac_polished", "shift"])
        for word in sorted(self.rows):
            r = self.rows[word]
            w.writerow([word, repr(r.frac_original), repr(r.frac_polished), repr(r.shift)])
        return buf.getvalue()


def token_set(text: str, config: TfIdfConfig | None = None) -> set[str]:
    probe = TfIdfModel({}, np.zeros(0), config or TfIdfConfig())
    return set(probe.terms(text))


def document_frequency(texts: Iterable[str], config: TfIdfConfig | None = None) -> tuple[dict[str, int], int]:
    counts: dict[str, int] = {}
    n = 0
    for text in texts:
        n += 1
        for tok in token_set(text, config):
            counts[tok] = counts.get(tok, 0) + 1
    return counts, n


def doc_frequency_shift(originals: Sequence[str], polished: Sequence[str],
                        config: TfIdfConfig | None = None) -> ShiftTable:
    """Fraction of documents containing each token, before and after polishing."""
    if not originals or not polished:
        raise ValueError("both corpora must be nonempty")
    c0, n0 = document_frequency(originals, config)
    c1, n1 = document_frequency(polished, config)
    rows = {w: ShiftRow(w, c0.get(w, 0) / n0, c1.get(w, 0) / n1) for w in set(c0) | set(c1)}
    return ShiftTable(rows, n0, n1)


@dataclass(frozen=True)
class TopShifts:
    increases: list[ShiftRow]
    decreases: list[ShiftRow]
    truncated: bool  # True when fewer than n words were available


def top_shifts(table: ShiftTable, n: int) -> TopShifts:
    if n < 1:
        raise ValueError("n must be >= 1")
    rows = list(table.rows.values())
    up = sorted(rows, key=lambda r: (-r.shift, r.word))[:n]
    down = sorted(rows, key=lambda r: (r.shift, r.word))[:n]
    return TopShifts(up, down, truncated=n > len(rows))


@dataclass(frozen=True)
class ConditionalRow:
    word: str
    frac_label1: float  # nan when no document was predicted 1
    frac_label0: float
    n_label1: int
    n_label0: int

    @property
    def undefined(self) -> tuple[str, ...]:
        return tuple(g for g, n in (("label1", self.n_label1), ("label0", self.n_label0)) if n == 0)


def label_conditional_frequency(texts: Sequence[str], predicted: Sequence[int], words: Sequence[str],
                                config: TfIdfConfig | None = None) -> list[ConditionalRow]:
    """Per word, the share of documents containing it within each predicted class."""
    if len(texts) != len(predicted):
        raise ValueError("every document needs a prediction")
    sets = [token_set(t, config) for t in texts]
    n1 = sum(1 for p in predicted if p == 1)
    n0 = len(predicted) - n1
    out = []
    for word in words:
        k1 = sum(1 for s, p in zip(sets, predicted) if p == 1 and word in s)
        k0 = sum(1 for s, p in zip(sets, predicted) if p != 1 and word in s)
        out.append(ConditionalRow(word, k1 / n1 if n1 else math.nan, k0 / n0 if n0 else math.nan, n1, n0))
    return out


def conditional_to_csv(rows: Sequence[ConditionalRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["word", "frac_label1", "frac_label0", "n_label1", "n_label0", "undefined"])
    for r in rows:
        w.writerow([r.word, "" if math.isnan(r.frac_label1) else repr(r.frac_label1),
                    "" if math.isnan(r.frac_label0) else repr(r.frac_label0),
                    r.n_label1, r.n_label0, ";".join(r.undefined)])
    return buf.getvalue()
