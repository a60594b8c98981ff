import json
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from fpdetect.corpus import split_disjoint
from fpdetect.models import (KINDS, EnsembleModel, ForestModel, GBDTModel, LinearModel, ModelFileError,
                             average_probability, component_proba, fit_platt, load_model, model_bytes,
                             model_from_bytes, save_model, to_prediction, train_component,
                             train_ensemble)
from fpdetect.trees import Tree
from fpdetect.vectorize import SparseVector, TfIdfConfig, fit_vocabulary


@pytest.fixture(scope="module")
def ensemble(small_pairs):
    return train_ensemble(small_pairs, seed=5)


def _constant_ensemble(probs, dim=2):
    """Ensemble whose components return fixed probabilities, built from exact constants."""
    tfidf = fit_vocabulary(["a b", "a b"], TfIdfConfig(min_df=1))
    svm, lr, rf, gb = probs
    comps = {
        "linear_svm": LinearModel("linear_svm", np.zeros(dim), math.log(svm / (1 - svm)), None, 0),
        "logistic_regression": LinearModel("logistic_regression", np.zeros(dim), math.log(lr / (1 - lr)), None, 0),
        "random_forest": ForestModel([Tree.constant(rf)], dim, 0),
        "gbdt": GBDTModel([], 0.1, math.log(gb / (1 - gb)), dim, 0),
    }
    return EnsembleModel(tfidf, comps, seed=0)


class TestComponents:
    @pytest.mark.parametrize("kind", KINDS)
    def test_separable_two_points(self, kind):
        X = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 1.0]]))
        y = np.array([1, 0])
        m = train_component(kind, X, y, seed=1)
        assert ((m.proba(X) > 0.5).astype(int) == y).all()

    def test_logistic_symmetric_bias(self):
        rng = np.random.default_rng(0)
        A = rng.normal(size=(40, 5))
        X = sp.csr_matrix(np.vstack([A, -A]))
        y = np.r_[np.ones(40), np.zeros(40)].astype(int)
        m = train_component("logistic_regression", X, y, seed=0)
        assert abs(m.bias) < 1e-6

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            train_component("gbdt", sp.csr_matrix(np.eye(3)), [1, 1, 1])

    def test_non_finite_rejected(self):
        X = sp.csr_matrix(np.array([[np.inf, 0.0], [0.0, 1.0]]))
        with pytest.raises(ValueError):
            train_component("linear_svm", X, [0, 1])

    def test_unanimous_forest(self):
        f = ForestModel([Tree.constant(1.0)] * 100, 3, 0)
        assert component_proba(f, SparseVector(np.array([0]), np.array([1.0]), 3)) == 1.0

    def test_empty_gbdt_is_half(self):
        g = GBDTModel([], 0.1, 0.0, 3, 0)
        assert component_proba(g, SparseVector(np.array([], dtype=np.int64), np.array([]), 3)) == 0.5

    def test_calibration_midpoint(self):
        m = LinearModel("linear_svm", np.array([1.0, 0.0]), 0.0, (2.0, -1.0), 0)
        x = SparseVector(np.array([0]), np.array([0.5]), 2)
        assert component_proba(m, x) == 0.5

    def test_dimension_mismatch(self):
        m = LinearModel("logistic_regression", np.zeros(3), 0.0, None, 0)
        with pytest.raises(ValueError):
            component_proba(m, SparseVector(np.array([0]), np.array([1.0]), 4))

    def test_platt_recovers_logistic_link(self):
        rng = np.random.default_rng(1)
        s = rng.normal(size=4000)
        y = (rng.random(4000) < 1 / (1 + np.exp(-(2 * s - 0.5)))).astype(int)
        a, b = fit_platt(s, y)
        assert a == pytest.approx(2.0, abs=0.25) and b == pytest.approx(-0.5, abs=0.2)

    def test_gbdt_heldout_accuracy(self, small_pairs):
        train, test = split_disjoint(small_pairs, seed=2, test_fraction=0.3)
        tfidf = fit_vocabulary([d.text for d in train])
        m = train_component("gbdt", tfidf.transform_many([d.text for d in train]),
                            [d.label for d in train], seed=3)
        pred = m.proba(tfidf.transform_many([d.text for d in test])) > 0.5
        assert np.mean(pred == np.array([d.label for d in test])) >= 0.9


class TestEnsemble:
    def test_mean_of_four(self):
        p = _constant_ensemble((0.9, 0.8, 0.7, 0.6)).predict("a b")
        assert p.probability == pytest.approx(0.75, abs=1e-12) and p.label == 1

    def test_half_is_label_zero(self):
        p = _constant_ensemble((0.5, 0.5, 0.5, 0.5)).predict("a")
        assert p.probability == 0.5 and p.label == 0
        assert to_prediction(0.5).label == 0
        assert to_prediction(math.nextafter(0.5, 1)).label == 1

    @settings(max_examples=200)
    @given(st.lists(st.floats(0, 1), min_size=4, max_size=4), st.permutations(range(4)),
           st.integers(0, 3), st.floats(0, 1))
    def test_mean_properties(self, probs, perm, which, bump):
        m = average_probability(probs)
        assert m == average_probability([probs[i] for i in perm])
        assert min(probs) <= m <= max(probs)
        raised = list(probs)
        raised[which] = max(raised[which], bump)
        assert average_probability(raised) >= m

    def test_incomplete_component_set(self):
        full = _constant_ensemble((0.6, 0.6, 0.6, 0.6))
        comps = dict(full.components)
        comps.pop("gbdt")
        with pytest.raises(ValueError):
            EnsembleModel(full.tfidf, comps, 0)

    def test_polished_docs_detected(self, ensemble, fixture_abstracts):
        from fpdetect.polisher import PromptSet, StubBackend, build_pairs
        fresh = build_pairs(fixture_abstracts[1500:1560], StubBackend(seed=4), PromptSet.from_file(), seed=4)
        preds = ensemble.predict_many([d.text for d in fresh])
        acc = np.mean([p.label == d.label for p, d in zip(preds, fresh)])
        assert acc >= 0.9

    def test_metadata(self, ensemble, small_pairs):
        md = ensemble.metadata
        assert md["n_train"] == len(small_pairs)
        assert set(md["train_ids"]) == {d.id for d in small_pairs}
        assert md["config"]["hyper"]["random_forest"]["n_estimators"] == 100


class TestModelFiles:
    def test_roundtrip(self, ensemble, tmp_path, fixture_abstracts):
        path = tmp_path / "m.fpd"
        save_model(ensemble, path)
        back = load_model(path)
        texts = [d.text for d in fixture_abstracts[1000:1100]]
        np.testing.assert_array_equal(back.predict_proba(texts), ensemble.predict_proba(texts))
        assert model_bytes(back) == path.read_bytes()

    def test_two_saves_identical(self, ensemble):
        assert model_bytes(ensemble) == model_bytes(ensemble)

    def test_header_layout(self, ensemble):
        raw = model_bytes(ensemble)
        head, payload = raw.split(b"\n", 1)
        magic, length, digest = head.split(b" ")
        assert magic == b"FPDETECT1" and int(length) == len(payload)
        assert json.loads(payload)["format_version"] == 1

    def test_corrupt_header(self, ensemble):
        raw = bytearray(model_bytes(ensemble))
        raw[0] ^= 0xFF
        with pytest.raises(ModelFileError):
            model_from_bytes(bytes(raw))

    def test_truncated(self, ensemble):
        with pytest.raises(ModelFileError):
            model_from_bytes(model_bytes(ensemble)[:-10])

    def test_flipped_payload(self, ensemble):
        raw = bytearray(model_bytes(ensemble))
        raw[-5] = ord("7") if raw[-5] != ord("7") else ord("8")
        with pytest.raises(ModelFileError):
            model_from_bytes(bytes(raw))

    def test_bad_version(self, ensemble):
        import hashlib
        d = ensemble.to_dict()
        d["format_version"] = 99
        payload = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        raw = b"FPDETECT1 %d %s\n" % (len(payload), hashlib.sha256(payload).hexdigest().encode()) + payload
        with pytest.raises(ModelFileError, match="version"):
            model_from_bytes(raw)


def test_training_deterministic_across_threads(small_pairs):
    a = model_bytes(train_ensemble(small_pairs[:120], seed=9, n_jobs=1))
    b = model_bytes(train_ensemble(small_pairs[:120], seed=9, n_jobs=4))
    c = model_bytes(train_ensemble(small_pairs[:120], seed=9, n_jobs=1))
    assert a == b == c
    assert model_bytes(train_ensemble(small_pairs[:120], seed=10)) != a
