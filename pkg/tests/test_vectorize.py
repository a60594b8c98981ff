import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpdetect.vectorize import TfIdfConfig, TfIdfModel, fit_vocabulary, tokenize


def test_tokenize_examples():
    assert tokenize("Delve, into\u2014intricate results!") == ["delve", "into", "intricate", "results"]
    assert tokenize("") == []
    assert tokenize("a\nb") == ["a", "b"]
    assert tokenize("x_y 3D") == ["x", "y", "3d"]


def test_idf_hand_values():
    m = fit_vocabulary(["a b", "a"], TfIdfConfig(min_df=1))
    assert m.vocabulary == {"a": 0, "b": 1}
    assert m.idf[0] == pytest.approx(1.0, abs=1e-12)
    assert m.idf[1] == pytest.approx(math.log(1.5) + 1, abs=1e-12)
    v = m.transform("a b")
    np.testing.assert_allclose(v.values, [0.5798, 0.8148], atol=1e-4)


def test_raw_count_tf():
    m = fit_vocabulary(["a b", "a"], TfIdfConfig(min_df=1))
    v = m.transform("a a b")
    raw = np.array([2.0, m.idf[1]])
    np.testing.assert_allclose(v.values, raw / np.linalg.norm(raw), rtol=1e-12)


def test_unknown_tokens_zero_vector():
    m = fit_vocabulary(["a b", "a"], TfIdfConfig(min_df=1))
    v = m.transform("zzz qqq")
    assert len(v.indices) == 0 and v.norm() == 0.0
    assert m.transform_many(["zzz"]).nnz == 0


def test_min_df_filters_and_errors():
    m = fit_vocabulary(["a b", "a c", "a b"], TfIdfConfig(min_df=2))
    assert sorted(m.vocabulary) == ["a", "b"]
    with pytest.raises(ValueError):
        fit_vocabulary(["a b", "a"], TfIdfConfig(min_df=3))
    with pytest.raises(ValueError):
        fit_vocabulary([], TfIdfConfig())


def test_every_doc_token_has_idf_one():
    m = fit_vocabulary(["x y", "x z", "x"], TfIdfConfig(min_df=1))
    assert m.idf[m.vocabulary["x"]] == 1.0


def test_bigrams():
    m = fit_vocabulary(["a b c", "a b"], TfIdfConfig(ngram_range=(1, 2), min_df=2))
    assert "a b" in m.vocabulary


def test_serialization_roundtrip():
    m = fit_vocabulary(["alpha beta", "beta gamma", "alpha gamma"], TfIdfConfig(min_df=1))
    back = TfIdfModel.from_dict(m.to_dict())
    assert back.vocabulary == m.vocabulary
    np.testing.assert_array_equal(back.idf, m.idf)


words = st.sampled_from(["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta"])
texts = st.lists(words, min_size=0, max_size=12).map(" ".join)


@settings(max_examples=60, deadline=None)
@given(st.lists(texts, min_size=1, max_size=12), texts)
def test_norm_is_one_or_zero(corpus, probe):
    corpus = [t for t in corpus if t] or ["alpha"]
    m = fit_vocabulary(corpus, TfIdfConfig(min_df=1))
    v = m.transform(probe)
    assert np.all(np.diff(v.indices) > 0)
    assert v.norm() == 0.0 or abs(v.norm() - 1.0) < 1e-12
    assert np.all(m.idf > 0)


@settings(max_examples=30, deadline=None)
@given(st.lists(texts.filter(bool), min_size=1, max_size=10))
def test_vocabulary_lexicographic_and_deterministic(corpus):
    m1 = fit_vocabulary(corpus, TfIdfConfig(min_df=1))
    m2 = fit_vocabulary(list(corpus), TfIdfConfig(min_df=1))
    terms = sorted(m1.vocabulary, key=m1.vocabulary.__getitem__)
    assert terms == sorted(terms)
    assert m1.vocabulary == m2.vocabulary
