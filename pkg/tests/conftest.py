from __future__ import annotations

from datetime import date

import pytest

from fpdetect.corpus import Document, Outcomes
from fpdetect.fixtures import load_fixture_abstracts
from fpdetect.polisher import PromptSet, StubBackend, build_pairs

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_doc(id="d1", text="some text", posted=date(2023, 5, 1), countries=("US",), label=None,
             source="biorxiv", subfields=("genomics",), first=None, last=None, outcomes=None,
             published=False, author_first_id="fa", author_last_id="la", **kw) -> Document:
    if first is None:
        first = countries[0] if countries else None
    if last is None:
        last = countries[-1] if countries else None
    return Document(id=id, text=text, source=source, posted_date=posted, subfields=tuple(subfields),
                    countries_all=tuple(countries), country_first=first, country_last=last,
                    author_first_id=author_first_id, author_last_id=author_last_id, label=label,
                    published=published, outcomes=outcomes, **kw)


@pytest.fixture(scope="session")
def fixture_abstracts():
    return load_fixture_abstracts()


@pytest.fixture(scope="session")
def small_pairs(fixture_abstracts):
    return build_pairs(fixture_abstracts[:150], StubBackend(seed=11), PromptSet.from_file(), seed=11)


@pytest.fixture
def outcomes_factory():
    def make(**kw):
        base = dict(citations=1, impact_factor=None, views_abstract=None, views_pdf=None,
                    views_full=None, publication_year=None)
        base.update(kw)
        return Outcomes(**base)
    return make
