"""Synthetic desk-scale corpora.

``make_abstracts`` writes plain pre-launch abstracts (the bundled fixture was
produced with ``make_abstracts(2000, seed=20221130)``). ``make_preprint_corpus``
builds a dated, multi-country preprint stream in which a planted share of
post-launch abstracts is run through the stub polisher, with outcome
measures attached, for exercising the trend and regression pipeline.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import replace
from datetime import date, timedelta
from importlib import resources

from .corpus import (ARXIV_SUBJECTS, CHATGPT_LAUNCH, COMPUTATIONAL_SUBFIELDS, Document, Outcomes,
                     document_from_dict)
from .polisher import PromptSet, StubBackend, polish

BIO_SUBFIELDS = [*sorted(COMPUTATIONAL_SUBFIELDS), "neuroscience", "microbiology", "cell biology",
                 "ecology", "immunology", "epidemiology", "cancer biology", "plant biology"]

_TOPICS = {
    "bio": ["gene regulation", "protein folding", "microbial communities", "immune signaling",
            "synaptic plasticity", "tumor heterogeneity", "chromatin accessibility",
            "viral evolution", "metabolic networks", "stem cell differentiation",
            "antibiotic resistance", "circadian rhythms", "plant stress responses",
            "single-cell transcriptomics", "host-pathogen interactions", "DNA repair"],
    "cs": ["graph neural networks", "convex optimization", "federated learning",
           "quantum error correction", "sparse regression", "reinforcement learning",
           "image segmentation", "program synthesis", "causal discovery", "speech recognition",
           "portfolio allocation", "wireless scheduling", "topological data analysis",
           "Bayesian inference", "compressed sensing", "language modeling"],
}
_METHODS = ["a probabilistic model", "a deep learning framework", "a sequencing assay",
            "a simulation study", "a randomized experiment", "a kernel estimator",
            "a longitudinal cohort", "an iterative algorithm", "a comparative analysis",
            "a variational approach", "a mixed-effects model", "a spectral method"]
_DATA = ["public datasets", "patient samples", "mouse models", "benchmark suites",
         "field observations", "synthetic data", "large-scale surveys", "cell lines",
         "historical records", "sensor measurements"]
_RESULTS = ["a significant improvement in accuracy", "a strong association with outcome",
            "robust performance across settings", "a reduction in error of {n} percent",
            "a previously unknown regulatory role", "consistent effects in {n} cohorts",
            "faster convergence than existing methods", "a shift in population structure",
            "improved sensitivity at low coverage", "stable estimates under noise"]
_OPEN = ["{T} is a central problem in {F}.", "Understanding {t} remains a major challenge.",
         "Recent work on {t} has raised new questions.", "{T} underlies many processes in {F}.",
         "Little is known about how {t} varies across conditions.",
         "Accurate models of {t} are needed in {F}."]
_MID = ["We develop {m} to study {t}.", "Here we use {m} applied to {d}.",
        "We analyze {d} with {m}.", "Our approach combines {m} with {d}.",
        "We collected {d} and fitted {m}."]
_RES = ["Our results show {r}.", "We observe {r} compared with baselines.",
        "The analysis reveals {r}.", "Experiments on {d} show {r}."]
_CLOSE = ["These results inform future work on {t}.", "The code and data are available online.",
          "This framework applies broadly to {F}.", "We discuss implications for {F}."]
# sentences that carry the words the stub polisher removes
_DELETABLE = ["We also report {r}.", "This effect is very large in {d}.",
              "However, the effect depends on {t}.", "Thus, {m} is preferable for {t}.",
              "The method is also very fast on {d}.", "However, existing studies of {t} are limited.",
              "Thus, we recommend {m} for {F}."]
# rare occurrences of marker words in human text keep the task from being trivial
_HUMAN_MARKERS = ["We provide a comprehensive evaluation on {d}.",
                  "Notably, the effect persists in {d}.", "{T} plays a pivotal role in {F}."]

_FIELD_NAME = {"bio": "biology", "cs": "computational science"}


def _abstract(rng: random.Random, domain: str) -> str:
    t = rng.choice(_TOPICS[domain])
    slots = {"t": t, "T": t[0].upper() + t[1:], "F": _FIELD_NAME[domain]}

    def fill(tpl: str) -> str:
        r = rng.choice(_RESULTS).format(n=rng.randint(2, 40))
        return tpl.format(m=rng.choice(_METHODS), d=rng.choice(_DATA), r=r, **slots)

    sents = [fill(rng.choice(_OPEN)), fill(rng.choice(_MID))]
    for tpl in rng.sample(_DELETABLE, rng.randint(1, 3)):
        sents.append(fill(tpl))
    sents.extend(fill(rng.choice(_RES)) for _ in range(rng.randint(1, 2)))
    if rng.random() < 0.05:
        sents.append(fill(rng.choice(_HUMAN_MARKERS)))
    sents.append(fill(rng.choice(_CLOSE)))
    head, tail = sents[:2], sents[2:-1]
    rng.shuffle(tail)
    return " ".join(head + tail + sents[-1:])


def _random_date(rng: random.Random, lo: date, hi: date) -> date:
    return lo + timedelta(days=rng.randrange((hi - lo).days + 1))


def make_abstracts(n: int, seed: int = 0, start: date = date(2019, 4, 1),
                   end: date = date(2022, 11, 29)) -> list[Document]:
    """Label-free pre-launch abstracts with minimal metadata."""
    rng = random.Random(seed)
    docs = []
    for i in range(n):
        domain = "bio" if i % 2 == 0 else "cs"
        docs.append(Document(
            id=f"fx-{i:05d}",
            text=_abstract(rng, domain),
            source="synthetic",
            posted_date=_random_date(rng, start, end),
            subfields=(rng.choice(BIO_SUBFIELDS) if domain == "bio" else rng.choice(ARXIV_SUBJECTS),),
            countries_all=("US",),
            country_first="US",
            country_last="US",
            author_first_id=f"fa-{i:05d}",
            author_last_id=f"la-{i:05d}",
        ))
    return docs


def load_fixture_abstracts() -> list[Document]:
    text = resources.files("fpdetect.data").joinpath("fixture_abstracts.jsonl").read_text("utf-8")
    return [document_from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


# country -> relative weight in the synthetic author population
_COUNTRY_WEIGHTS = {"US": 30, "GB": 8, "DE": 8, "FR": 5, "JP": 5, "KR": 4, "CA": 4, "IT": 4,
                    "AU": 3, "TH": 2, "MY": 2, "ID": 1, "IN": 3, "SG": 1, "CN": 18, "HK": 1,
                    "RU": 3, "IR": 2, "VN": 1, "SA": 1, "EG": 1}
_RESTRICTED = {"CN", "HK", "MO", "RU", "IR", "VN", "SA", "EG", "CM", "UA"}


def make_preprint_corpus(n: int, seed: int = 0, start: date = date(2019, 4, 1),
                         end: date = date(2024, 3, 31), n_authors: int | None = None,
                         use_access: float = 0.12, use_restricted: float = 0.22,
                         attention_effect: float = 0.25) -> list[Document]:
    """Dated multi-country preprints with planted ChatGPT use and outcomes.

    After launch a paper is polished with probability rising linearly from 0
    to ``use_access`` / ``use_restricted`` (restricted-country author teams)
    over the first nine months. ``label`` records the planted truth.
    """
    rng = random.Random(seed)
    n_authors = n_authors or max(10, n // 6)
    countries = list(_COUNTRY_WEIGHTS)
    weights = [_COUNTRY_WEIGHTS[c] for c in countries]
    author_country = {f"a{j:05d}": rng.choices(countries, weights)[0] for j in range(n_authors)}
    author_skill = {a: rng.gauss(0.0, 0.7) for a in author_country}
    authors = sorted(author_country)
    backend = StubBackend(seed=seed, quote_rate=0.0)
    prompts = PromptSet.from_file()
    docs = []
    for i in range(n):
        source = "biorxiv" if rng.random() < 0.6 else "arxiv"
        last = rng.choice(authors)
        home = author_country[last]
        team = [home if rng.random() < 0.8 else rng.choices(countries, weights)[0]
                for _ in range(rng.randint(1, 5))]
        first = rng.choice(authors)
        if author_country[first] != team[0]:
            team[0] = author_country[first]
        team.append(home)
        posted = _random_date(rng, start, end)
        if source == "biorxiv":
            subfields = (rng.choice(BIO_SUBFIELDS),)
            domain = "bio"
        else:
            k = 1 if rng.random() < 0.8 else 2
            subfields = tuple(sorted(rng.sample(ARXIV_SUBJECTS, k)))
            domain = "cs"
        text = _abstract(rng, domain)
        used = 0
        if posted >= CHATGPT_LAUNCH:
            months = (posted - CHATGPT_LAUNCH).days / 30.4
            ceiling = use_restricted if set(team) <= _RESTRICTED else use_access
            if rng.random() < ceiling * min(1.0, months / 9.0):
                used = 1
        doc = Document(id=f"pp-{i:06d}", text=text, source=source, posted_date=posted,
                       subfields=subfields, countries_all=tuple(team), country_first=team[0],
                       country_last=team[-1], author_first_id=first, author_last_id=last)
        if used:
            prompt = prompts.prompts[rng.randrange(len(prompts))]
            doc = replace(doc, text=polish(doc, prompt, backend))
        post = posted >= CHATGPT_LAUNCH
        quality = author_skill[last] + rng.gauss(0.0, 1.0)
        lift = attention_effect if (used and post) else 0.0
        published = rng.random() < 0.45
        outcomes = Outcomes(
            citations=int(rng.expovariate(1.0) * math.exp(1.0 + 0.5 * quality)),
            impact_factor=round(math.exp(1.2 + 0.3 * quality + rng.gauss(0, 0.3)), 3) if published else None,
            views_abstract=int(math.exp(5.5 + 0.6 * quality + lift + rng.gauss(0, 0.3))),
            views_pdf=int(math.exp(4.5 + 0.6 * quality + lift + rng.gauss(0, 0.3))),
            views_full=int(math.exp(4.0 + 0.6 * quality + lift + rng.gauss(0, 0.3))) if source == "biorxiv" else None,
            publication_year=(posted.year + rng.randint(0, 1)) if published else None,
        )
        if source == "arxiv":
            outcomes = replace(outcomes, views_abstract=None, views_pdf=None)
        docs.append(replace(doc, label=used, published=published, outcomes=outcomes))
    return docs
