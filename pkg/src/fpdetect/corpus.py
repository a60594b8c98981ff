"""Document records, corpus I/O, time periods and legal-access status."""

from __future__ import annotations

import csv
import enum
import hashlib
import json
import warnings
from dataclasses import dataclass, field, fields
from datetime import date
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

CHATGPT_LAUNCH = date(2022, 11, 30)
CLEAN_PERIOD_END = date(2023, 2, 5)

SOURCES = ("biorxiv", "arxiv", "elsevier", "synthetic")
ATTRIBUTION_RULES = ("all_authors", "first_author", "last_author")

# BioRxiv subfields treated as computational in the access regressions
COMPUTATIONAL_SUBFIELDS = frozenset({"bioengineering", "bioinformatics", "genetic and genomic medicine",
                                     "genomics", "health informatics", "systems biology"})
ARXIV_SUBJECTS = ("computer science", "economics", "electronic engineering", "mathematics",
                  "physics", "quantitative biology", "quantitative finance", "statistics")

# Countries where English is an official or educational language, dropped
# from the Asian similar-demand comparison.
ASIAN_ENGLISH_EXCLUDED = frozenset({"SG", "PH", "IN", "PK"})
ASIAN_COUNTRIES = frozenset({
    "AF", "AM", "AZ", "BD", "BH", "BN", "BT", "CN", "CY", "GE", "HK", "ID",
    "IL", "IQ", "IR", "JO", "JP", "KG", "KH", "KP", "KR", "KW", "KZ", "LA",
    "LB", "LK", "MM", "MN", "MO", "MV", "MY", "NP", "OM", "PS", "QA", "SA",
    "SY", "TH", "TJ", "TL", "TM", "TR", "TW", "UZ", "VN", "YE", "AE",
}) | ASIAN_ENGLISH_EXCLUDED


class CorpusError(ValueError):
    """Raised for malformed corpus files or records."""


class UnknownCountryError(ValueError):
    pass


class Period(str, enum.Enum):
    PRE = "pre"
    CLEAN = "clean"
    POST_CLEAN = "post_clean"


def assign_period(d: date) -> Period:
    if d < CHATGPT_LAUNCH:
        return Period.PRE
    if d <= CLEAN_PERIOD_END:
        return Period.CLEAN
    return Period.POST_CLEAN


def in_analysis_period(d: date, period: str) -> bool:
    """True when ``d`` falls in the post-launch window named ``period``.

    ``clean`` is the clean period only; ``full`` is clean plus everything after.
    """
    p = assign_period(d)
    if period == "clean":
        return p is Period.CLEAN
    if period == "full":
        return p is not Period.PRE
    raise ValueError(f"unknown period {period!r} (expected 'clean' or 'full')")


@dataclass(frozen=True)
class Outcomes:
    citations: int | None = None
    impact_factor: float | None = None
    views_abstract: int | None = None
    views_pdf: int | None = None
    views_full: int | None = None
    publication_year: int | None = None

    def __post_init__(self):
        for name in ("citations", "views_abstract", "views_pdf", "views_full"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise CorpusError(f"outcome {name} must be >= 0, got {v}")
        if self.impact_factor is not None and self.impact_factor < 0:
            raise CorpusError("impact_factor must be >= 0")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)
                if getattr(self, f.name) is not None}


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    source: str
    posted_date: date
    subfields: tuple[str, ...] = ()
    countries_all: tuple[str, ...] = ()
    country_first: str | None = None
    country_last: str | None = None
    author_first_id: str | None = None
    author_last_id: str | None = None
    label: int | None = None
    published: bool = False
    outcomes: Outcomes | None = None
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if not self.id:
            raise CorpusError("document id must be nonempty")
        if not self.text or not self.text.strip():
            raise CorpusError(f"document {self.id}: text must be nonempty")
        if "\n" in self.text or "\r" in self.text:
            raise CorpusError(f"document {self.id}: text contains newline")
        if self.source not in SOURCES:
            raise CorpusError(f"document {self.id}: unknown source {self.source!r}")
        if self.label is not None and self.label not in (0, 1):
            raise CorpusError(f"document {self.id}: label must be 0 or 1")

    @property
    def pair_key(self) -> str:
        """Grouping key that keeps an original and its polished copy together."""
        return self.meta.get("pair_of", self.id)

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "text": self.text,
            "source": self.source,
            "posted_date": self.posted_date.isoformat(),
            "subfields": list(self.subfields),
            "countries_all": list(self.countries_all),
            "country_first": self.country_first,
            "country_last": self.country_last,
            "author_first_id": self.author_first_id,
            "author_last_id": self.author_last_id,
        }
        if self.label is not None:
            d["label"] = self.label
        d["published"] = self.published
        if self.outcomes is not None:
            d["outcomes"] = self.outcomes.to_dict()
        if self.meta:
            d["meta"] = self.meta
        return d


def clean_text(text: str) -> str:
    """Replace line breaks with single spaces."""
    return " ".join(text.replace("\r\n", "\n").replace("\r", "\n").split("\n")).strip()


def document_from_dict(rec: dict) -> Document:
    for key in ("id", "text", "source", "posted_date"):
        if key not in rec or rec[key] in (None, ""):
            raise CorpusError(f"missing required field {key!r}")
    try:
        posted = date.fromisoformat(str(rec["posted_date"]))
    except ValueError as exc:
        raise CorpusError(f"bad posted_date {rec['posted_date']!r}") from exc
    label = rec.get("label")
    if label is not None:
        if isinstance(label, bool) or label not in (0, 1):
            raise CorpusError(f"label must be 0 or 1, got {label!r}")
        label = int(label)
    outcomes = rec.get("outcomes")
    if outcomes is not None:
        unknown = set(outcomes) - {f.name for f in fields(Outcomes)}
        if unknown:
            raise CorpusError(f"unknown outcome fields {sorted(unknown)}")
        outcomes = Outcomes(**outcomes)
    countries = tuple(rec.get("countries_all") or ())
    return Document(
        id=str(rec["id"]),
        text=clean_text(str(rec["text"])),
        source=rec["source"],
        posted_date=posted,
        subfields=tuple(rec.get("subfields") or ()),
        countries_all=countries,
        country_first=rec.get("country_first") or (countries[0] if countries else None),
        country_last=rec.get("country_last") or (countries[-1] if countries else None),
        author_first_id=rec.get("author_first_id"),
        author_last_id=rec.get("author_last_id"),
        label=label,
        published=bool(rec.get("published", False)),
        outcomes=outcomes,
        meta=dict(rec.get("meta") or {}),
    )


def load_corpus(path: str | Path, format: str = "jsonl") -> list[Document]:
    if format != "jsonl":
        raise ValueError(f"unsupported corpus format {format!r}")
    docs: list[Document] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise CorpusError("record is not a JSON object")
                doc = document_from_dict(rec)
            except (json.JSONDecodeError, CorpusError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
            if doc.id in seen:
                raise CorpusError(
                    f"{path}:{lineno}: duplicate id {doc.id!r} (first seen on line {seen[doc.id]})")
            seen[doc.id] = lineno
            docs.append(doc)
    return docs


def write_corpus(docs: Iterable[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_dict(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def corpus_fingerprint(docs: Iterable[Document]) -> str:
    h = hashlib.sha256()
    for doc in sorted(docs, key=lambda d: d.id):
        h.update(json.dumps([doc.id, doc.label, doc.text], ensure_ascii=False).encode())
        h.update(b"\n")
    return h.hexdigest()


def split_disjoint(docs: Sequence[Document], seed: int, test_fraction: float,
                   ) -> tuple[list[Document], list[Document]]:
    """Seeded train/test split; documents sharing a ``pair_key`` stay together."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if not docs:
        raise ValueError("cannot split an empty corpus")
    keys = sorted({d.pair_key for d in docs})
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(keys))
    n_test = int(round(test_fraction * len(keys)))
    test_keys = {keys[i] for i in order[:n_test]}
    train = [d for d in docs if d.pair_key not in test_keys]
    test = [d for d in docs if d.pair_key in test_keys]
    return train, test


# ---------------------------------------------------------------------------
# legal access

def _known_countries() -> frozenset[str]:
    text = resources.files("fpdetect.data").joinpath("iso3166_alpha2.txt").read_text()
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


KNOWN_COUNTRIES = _known_countries()


@dataclass(frozen=True)
class AccessPolicy:
    """Per-country restriction intervals. ``end`` is inclusive; ``None`` means open-ended."""

    entries: dict[str, tuple[tuple[date, date | None], ...]]
    strict: bool = False

    def __post_init__(self):
        for country, intervals in self.entries.items():
            ordered = sorted(intervals, key=lambda iv: iv[0])
            for start, end in ordered:
                if end is not None and end < start:
                    raise ValueError(f"{country}: restriction ends before it starts")
            for (s0, e0), (s1, _) in zip(ordered, ordered[1:]):
                if e0 is None or e0 >= s1:
                    raise ValueError(f"{country}: overlapping restriction intervals")

    @classmethod
    def from_csv(cls, path: str | Path | None = None, strict: bool = False) -> "AccessPolicy":
        if path is None:
            text = resources.files("fpdetect.data").joinpath("access_policy.csv").read_text()
        else:
            text = Path(path).read_text(encoding="utf-8")
        entries: dict[str, list] = {}
        for row in csv.DictReader(text.splitlines()):
            start = date.fromisoformat(row["start_date"].strip())
            end_s = (row.get("end_date") or "").strip()
            end = date.fromisoformat(end_s) if end_s else None
            entries.setdefault(row["country"].strip().upper(), []).append((start, end))
        return cls({k: tuple(v) for k, v in entries.items()}, strict=strict)

    def is_restricted(self, country: str, d: date) -> bool:
        """Restriction status of one country on ``d``.

        Dates before the ChatGPT launch are evaluated as of launch day, so
        pre-launch documents are grouped by the status the country started with.
        """
        if country not in KNOWN_COUNTRIES:
            if self.strict:
                raise UnknownCountryError(f"unknown country code {country!r}")
            warnings.warn(f"unknown country code {country!r} treated as unrestricted",
                          stacklevel=3)
            return False
        d = max(d, CHATGPT_LAUNCH)
        for start, end in self.entries.get(country, ()):
            if start <= d and (end is None or d <= end):
                return True
        return False

    def ever_restricted(self, country: str) -> bool:
        return country in self.entries


def default_policy(strict: bool = False) -> AccessPolicy:
    return AccessPolicy.from_csv(None, strict=strict)


def rule_countries(doc: Document, rule: str) -> tuple[str, ...]:
    if rule == "all_authors":
        countries = doc.countries_all
    elif rule == "first_author":
        countries = (doc.country_first,) if doc.country_first else ()
    elif rule == "last_author":
        countries = (doc.country_last,) if doc.country_last else ()
    else:
        raise ValueError(f"unknown attribution rule {rule!r}")
    if not countries:
        raise CorpusError(f"document {doc.id}: no author country available for rule {rule}")
    return countries


def access_status(policy: AccessPolicy, doc: Document, d: date | None = None,
                  rule: str = "all_authors") -> bool:
    """True when the document counts as *without* legal access on ``d``."""
    d = doc.posted_date if d is None else d
    return all(policy.is_restricted(c, d) for c in rule_countries(doc, rule))


def small_country_exclusion(docs: Sequence[Document], policy: AccessPolicy,
                            min_count: int = 10) -> Callable[[Document], bool]:
    """Predicate that is True for documents to *exclude*.

    A country is excluded when it was restricted at some point and has fewer
    than ``min_count`` documents either before or after launch.
    """
    before: dict[str, int] = {}
    after: dict[str, int] = {}
    for doc in docs:
        bucket = before if doc.posted_date < CHATGPT_LAUNCH else after
        for c in set(doc.countries_all):
            bucket[c] = bucket.get(c, 0) + 1
    small = {c for c in set(before) | set(after)
             if policy.ever_restricted(c)
             and (before.get(c, 0) < min_count or after.get(c, 0) < min_count)}

    def excluded(doc: Document) -> bool:
        return any(c in small for c in doc.countries_all)

    return excluded


def is_asian_similar_demand(doc: Document) -> bool:
    """All authors from Asian countries where English is not official."""
    cs = set(doc.countries_all)
    return bool(cs) and cs <= ASIAN_COUNTRIES and not (cs & ASIAN_ENGLISH_EXCLUDED)
