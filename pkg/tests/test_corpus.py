import json
from datetime import date, timedelta

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fpdetect.corpus import (CHATGPT_LAUNCH, CLEAN_PERIOD_END, AccessPolicy, CorpusError, Period,
                             UnknownCountryError, access_status, assign_period, corpus_fingerprint,
                             default_policy, document_from_dict, in_analysis_period,
                             is_asian_similar_demand, load_corpus, small_country_exclusion,
                             split_disjoint, write_corpus)

from conftest import make_doc


def _write_lines(tmp_path, lines):
    p = tmp_path / "c.jsonl"
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p


def _rec(i, **kw):
    r = {"id": f"d{i}", "text": "an abstract", "source": "arxiv", "posted_date": "2023-01-02"}
    r.update(kw)
    return json.dumps(r)


class TestPeriods:
    def test_boundaries(self):
        assert assign_period(CHATGPT_LAUNCH - timedelta(days=1)) is Period.PRE
        assert assign_period(CHATGPT_LAUNCH) is Period.CLEAN
        assert assign_period(CLEAN_PERIOD_END) is Period.CLEAN
        assert assign_period(CLEAN_PERIOD_END + timedelta(days=1)) is Period.POST_CLEAN

    @given(st.dates(min_value=date(2015, 1, 1), max_value=date(2030, 1, 1)))
    def test_partition(self, d):
        p = assign_period(d)
        assert in_analysis_period(d, "clean") == (p is Period.CLEAN)
        assert in_analysis_period(d, "full") == (p is not Period.PRE)

    def test_unknown_period(self):
        with pytest.raises(ValueError):
            in_analysis_period(CHATGPT_LAUNCH, "late")


class TestDocument:
    def test_newline_rejected(self):
        with pytest.raises(CorpusError):
            make_doc(text="a\nb")

    def test_empty_text_rejected(self):
        with pytest.raises(CorpusError):
            make_doc(text="   ")

    def test_bad_label(self):
        with pytest.raises(CorpusError):
            make_doc(label=2)

    def test_negative_counts(self, outcomes_factory):
        with pytest.raises(CorpusError):
            outcomes_factory(citations=-1)

    def test_roundtrip(self, outcomes_factory):
        d = make_doc(label=1, outcomes=outcomes_factory(views_pdf=3, publication_year=2023), meta={"pair_of": "x"})
        back = document_from_dict(json.loads(json.dumps(d.to_dict())))
        assert back == d
        assert back.meta == {"pair_of": "x"}
        assert back.pair_key == "x"


class TestLoad:
    def test_newlines_removed_on_ingest(self, tmp_path):
        p = _write_lines(tmp_path, [_rec(1, text="line one\nline two")])
        assert load_corpus(p)[0].text == "line one line two"

    def test_malformed_line_reports_number(self, tmp_path):
        p = _write_lines(tmp_path, [_rec(1), "{not json", _rec(3)])
        with pytest.raises(CorpusError, match=r":2:"):
            load_corpus(p)

    def test_missing_field_reports_number(self, tmp_path):
        p = _write_lines(tmp_path, [_rec(1), json.dumps({"id": "x", "source": "arxiv"})])
        with pytest.raises(CorpusError, match=r":2:.*text"):
            load_corpus(p)

    def test_duplicate_id(self, tmp_path):
        p = _write_lines(tmp_path, [_rec(1), _rec(2), _rec(1)])
        with pytest.raises(CorpusError, match="duplicate"):
            load_corpus(p)

    def test_write_then_load(self, tmp_path, small_pairs):
        p = tmp_path / "pairs.jsonl"
        write_corpus(small_pairs, p)
        back = load_corpus(p)
        assert back == small_pairs
        assert corpus_fingerprint(back) == corpus_fingerprint(small_pairs)


class TestSplit:
    def test_pairs_stay_together(self, small_pairs):
        train, test = split_disjoint(small_pairs, seed=3, test_fraction=0.2)
        assert len(train) + len(test) == len(small_pairs)
        assert not {d.pair_key for d in train} & {d.pair_key for d in test}
        assert len(test) == 2 * round(0.2 * 150)

    def test_seeded(self, small_pairs):
        a = split_disjoint(small_pairs, seed=3, test_fraction=0.3)
        b = split_disjoint(small_pairs, seed=3, test_fraction=0.3)
        assert a == b

    def test_bad_fraction(self, small_pairs):
        with pytest.raises(ValueError):
            split_disjoint(small_pairs, seed=0, test_fraction=1.0)


class TestAccessPolicy:
    policy = default_policy()

    @pytest.mark.parametrize("country,d,expected", [
        ("CN", date(2024, 3, 1), True),
        ("IT", date(2023, 3, 30), False),
        ("IT", date(2023, 3, 31), True),
        ("IT", date(2023, 4, 28), True),
        ("IT", date(2023, 4, 29), False),
        ("UA", date(2023, 2, 18), True),
        ("UA", date(2023, 2, 19), False),
        ("US", date(2023, 6, 1), False),
    ])
    def test_probes(self, country, d, expected):
        assert self.policy.is_restricted(country, d) is expected

    def test_pre_launch_uses_launch_status(self):
        assert self.policy.is_restricted("CN", date(2020, 1, 1))
        assert not self.policy.is_restricted("IT", date(2020, 1, 1))

    def test_unknown_country(self):
        with pytest.warns(UserWarning):
            assert not self.policy.is_restricted("ZZ", date(2023, 1, 1))
        with pytest.raises(UnknownCountryError):
            default_policy(strict=True).is_restricted("ZZ", date(2023, 1, 1))

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            AccessPolicy({"XX": ((date(2023, 1, 1), date(2023, 3, 1)), (date(2023, 2, 1), None))})

    def test_inverted_rejected(self):
        with pytest.raises(ValueError):
            AccessPolicy({"XX": ((date(2023, 3, 1), date(2023, 1, 1)),)})

    def test_all_authors_rule(self):
        mixed = make_doc(countries=("CN", "US"), posted=date(2023, 5, 1))
        assert not access_status(self.policy, mixed)
        assert access_status(self.policy, mixed, rule="first_author")
        assert not access_status(self.policy, mixed, rule="last_author")
        assert access_status(self.policy, make_doc(countries=("CN", "HK")))

    def test_missing_country_raises(self):
        with pytest.raises(CorpusError):
            access_status(self.policy, make_doc(countries=(), first="", last=""))


def test_asian_subset():
    assert is_asian_similar_demand(make_doc(countries=("CN", "KR")))
    assert not is_asian_similar_demand(make_doc(countries=("CN", "IN")))
    assert not is_asian_similar_demand(make_doc(countries=("CN", "US")))


def test_small_country_exclusion():
    policy = default_policy()
    docs = [make_doc(id=f"r{i}", countries=("RU",), posted=date(2022, 1, 1)) for i in range(3)]
    docs += [make_doc(id=f"c{i}", countries=("CN",), posted=date(2022 + i % 2, 6, 1)) for i in range(40)]
    excluded = small_country_exclusion(docs, policy, min_count=10)
    assert excluded(docs[0])
    assert not excluded(docs[5])
