"""Build label-1 training texts by polishing label-0 abstracts through a backend.

The offline ``StubBackend`` imitates the vocabulary shift of LLM polishing:
it injects marker words (``delve``, ``intricate``, ...) and drops others,
leaving every other token alone. ``HttpBackend`` posts the filled prompt to
a service and returns the response body.
"""

from __future__ import annotations

import hashlib
import os
import random
import re
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Protocol, Sequence

from .corpus import CHATGPT_LAUNCH, Document, clean_text
from .seeding import rng_for

PLACEHOLDER = "<abstract>"
TOKEN_ENV = "FPDETECT_POLISH_TOKEN"

_QUOTE_PAIRS = {'"': '"', "“": "”", "'": "'", "‘": "’"}


class PolishError(RuntimeError):
    def __init__(self, message: str, retryable: bool = True):
        super().__init__(message)
        self.retryable = retryable


@dataclass(frozen=True)
class PromptSet:
    prompts: tuple[str, ...]

    def __post_init__(self):
        if not self.prompts:
            raise ValueError("prompt set is empty")
        for p in self.prompts:
            if p.count(PLACEHOLDER) != 1:
                raise ValueError(f"prompt must contain exactly one {PLACEHOLDER}: {p!r}")

    @classmethod
    def from_file(cls, path: str | Path | None = None) -> "PromptSet":
        if path is None:
            text = resources.files("fpdetect.data").joinpath("prompts.txt").read_text()
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls(tuple(line.strip() for line in text.splitlines() if line.strip()))

    def __len__(self) -> int:
        return len(self.prompts)


def fill_prompt(prompt: str, abstract: str) -> str:
    return prompt.replace(PLACEHOLDER, abstract)


# Sentence rewrites used to inject each marker word. {s} is the sentence
# without its final punctuation, {l} the same with a lower-cased first letter.
INSERTION_TEMPLATES = {
    "delve": "To delve deeper, {l}.",
    "intricate": "{s}, shedding light on intricate mechanisms.",
    "notably": "Notably, {l}.",
    "showcasing": "{s}, showcasing the robustness of the approach.",
    "comprehensive": "{s}, offering a comprehensive perspective.",
    "pivotal": "{s}, which plays a pivotal role.",
    "underscore": "These findings underscore that {l}.",
    "meticulous": "Through meticulous analysis, {l}.",
}

DEFAULT_INSERTIONS = {"delve": 0.45, "intricate": 0.4, "notably": 0.4, "showcasing": 0.35,
                      "comprehensive": 0.4, "pivotal": 0.35, "underscore": 0.35,
                      "meticulous": 0.3}
DEFAULT_DELETIONS = {"also": 0.9, "very": 0.9, "however": 0.85, "thus": 0.85}


@dataclass(frozen=True)
class MarkerLexicon:
    insertions: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_INSERTIONS))
    deletions: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_DELETIONS))

    def __post_init__(self):
        for word, rate in {**self.insertions, **self.deletions}.items():
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"rate for {word!r} must be in [0, 1]")


_SENT_RE = re.compile(r"(?<=[.!?])\s+")


def _split_sentences(text: str) -> list[str]:
    return [s for s in _SENT_RE.split(text.strip()) if s]


def _body(sentence: str) -> str:
    return sentence.rstrip().rstrip(".!?")


def _lower_first(s: str) -> str:
    if len(s) > 1 and s[1].isupper():
        return s
    return s[:1].lower() + s[1:]


def _upper_first(s: str) -> str:
    return s[:1].upper() + s[1:]


class PolishBackend(Protocol):
    kind: str

    def complete(self, doc_id: str, prompt: str, abstract: str) -> str: ...


class StubBackend:
    """Deterministic offline polisher; output depends only on (id, text, prompt, seed)."""

    kind = "stub"

    def __init__(self, lexicon: MarkerLexicon | None = None, seed: int = 0,
                 quote_rate: float = 0.05):
        self.lexicon = lexicon or MarkerLexicon()
        self.seed = seed
        self.quote_rate = quote_rate

    def _rng(self, doc_id: str, prompt: str, abstract: str) -> random.Random:
        h = hashlib.sha256()
        for part in (str(self.seed), doc_id, abstract, prompt):
            h.update(part.encode("utf-8"))
            h.update(b"\x00")
        return random.Random(h.digest())

    def complete(self, doc_id: str, prompt: str, abstract: str) -> str:
        rng = self._rng(doc_id, prompt, abstract)
        sentences = _split_sentences(abstract)
        for word, rate in sorted(self.lexicon.deletions.items()):
            pattern = re.compile(rf"\b{re.escape(word)}\b,?\s*", re.IGNORECASE)
            kept = []
            for s in sentences:
                if rng.random() < rate:
                    s = _upper_first(pattern.sub("", s).strip())
                kept.append(s)
            sentences = [s for s in kept if s.strip(" .!?")]
        if not sentences:
            sentences = [abstract.strip()]
        for word, rate in sorted(self.lexicon.insertions.items()):
            if rng.random() >= rate:
                continue
            i = rng.randrange(len(sentences))
            template = INSERTION_TEMPLATES.get(word, "{s}, " + word + ".")
            body = _body(sentences[i])
            sentences[i] = template.format(s=body, l=_lower_first(body))
        out = " ".join(sentences)
        if rng.random() < self.quote_rate:
            out = f"“{out}”"
        return out


class HttpBackend:
    """POSTs the filled prompt as text/plain; the response body is the polished text."""

    kind = "http"

    def __init__(self, endpoint: str, token: str | None = None, timeout: float = 60.0,
                 headers: dict[str, str] | None = None):
        self.endpoint = endpoint
        self.token = token if token is not None else os.environ.get(TOKEN_ENV)
        self.timeout = timeout
        self.headers = dict(headers or {})

    def complete(self, doc_id: str, prompt: str, abstract: str) -> str:
        body = fill_prompt(prompt, abstract).encode("utf-8")
        headers = {"Content-Type": "text/plain; charset=utf-8", "X-Document-Id": doc_id,
                   **self.headers}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        req = urllib.request.Request(self.endpoint, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.read().decode("utf-8")
        except urllib.error.HTTPError as exc:
            raise PolishError(f"polish backend returned HTTP {exc.code}",
                              retryable=exc.code >= 500 or exc.code == 429) from exc
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise PolishError(f"polish backend unreachable: {exc}") from exc


def strip_wrapping_quotes(text: str) -> str:
    """Remove one pair of quotation marks enclosing the whole text."""
    t = text.strip()
    if len(t) >= 2 and t[0] in _QUOTE_PAIRS and t[-1] == _QUOTE_PAIRS[t[0]]:
        inner = t[1:-1]
        if t[0] not in inner and t[-1] not in inner:
            return inner.strip()
    return t


def polish(doc: Document, prompt: str, backend: PolishBackend, strip_quotes: bool = True) -> str:
    if not doc.text.strip():
        raise ValueError(f"document {doc.id} has empty text")
    out = backend.complete(doc.id, prompt, doc.text)
    if strip_quotes:
        out = strip_wrapping_quotes(out)
    out = clean_text(out)
    if not out:
        raise PolishError(f"backend returned empty text for {doc.id}", retryable=True)
    return out


def build_pairs(originals: Sequence[Document], backend: PolishBackend, prompts: PromptSet,
                seed: int, strip_quotes: bool = True, require_pre_launch: bool = False,
                n_jobs: int = 1) -> list[Document]:
    """Each original (label 0) followed by its polished copy (label 1).

    The prompt for each document is drawn uniformly from a generator seeded
    by ``(seed, doc.id)``, so assignments do not depend on processing order.
    """
    if len(prompts) == 0:
        raise ValueError("prompt set is empty")
    for doc in originals:
        if doc.label not in (None, 0):
            raise ValueError(f"original {doc.id} already carries label {doc.label}")
        if require_pre_launch and doc.posted_date >= CHATGPT_LAUNCH:
            raise ValueError(f"original {doc.id} is dated on/after the ChatGPT launch")

    def make(doc: Document) -> tuple[Document, Document]:
        k = int(rng_for(seed, doc.id).integers(len(prompts)))
        text = polish(doc, prompts.prompts[k], backend, strip_quotes=strip_quotes)
        orig = replace(doc, label=0, meta={**doc.meta, "prompt_index": k, "role": "original"})
        pol = replace(doc, id=f"{doc.id}#polished", text=text, label=1,
                      meta={**doc.meta, "pair_of": doc.id, "prompt_index": k, "role": "polished"})
        return orig, pol

    with ThreadPoolExecutor(max_workers=max(1, n_jobs)) as pool:
        made = list(pool.map(make, originals))
    return [d for pair in made for d in pair]
