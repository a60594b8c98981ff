"""Acceptance criteria AC1..AC11; each test records one pass/fail line for the summary."""

import math
import time
from datetime import date

import numpy as np

import conftest
from fpdetect.corpus import default_policy, split_disjoint
from fpdetect.econometrics import DesignMatrix, fixed_effects, ols_cluster, percentile_normalize
from fpdetect.evalsim import compute_metrics, roc_auc_rank, run_simulation, sample_at_proportion, score_with_model
from fpdetect.fingerprint import doc_frequency_shift
from fpdetect.models import EnsembleModel, ForestModel, GBDTModel, LinearModel, average_probability, train_ensemble
from fpdetect.polisher import DEFAULT_DELETIONS, DEFAULT_INSERTIONS, PromptSet, StubBackend, build_pairs
from fpdetect.trees import Tree
from fpdetect.vectorize import TfIdfConfig, fit_vocabulary, tokenize

from oracles import (auc_pairs, confusion_metrics, cr1_sandwich, doc_freq_shift, hc1, label0_count, lsdv,
                     ols_normal_equations, percentile_ranks)
from pipeline import run_pipeline


def record(n, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] AC{n}: {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_ac01_stub_fixture_detection(fixture_abstracts):
    t0 = time.perf_counter()
    pairs = build_pairs(fixture_abstracts[:2000], StubBackend(seed=1), PromptSet.from_file(), seed=1, n_jobs=4)
    train, test = split_disjoint(pairs, seed=1, test_fraction=0.2)
    model = train_ensemble(train, seed=1, n_jobs=4)
    report = run_simulation(score_with_model(model, test), n_iter=1000, seed=1, n_jobs=4)
    elapsed = time.perf_counter() - t0
    agg = report.aggregate()
    acc, gap = agg["accuracy"]["mean"], agg["gap"]["mean"]
    ok = len(pairs) == 4000 and acc >= 0.95 and gap <= 0.03 and elapsed <= 300
    record(1, ok, f"accuracy {acc:.4f} (>= 0.95), gap {gap:.4f} (<= 0.03), "
                  f"{len(train)}/{len(test)} train/test docs, {elapsed:.1f}s (<= 300s)")


def test_ac02_sampling_rule():
    rng = np.random.default_rng(2)
    idx, _ = sample_at_proportion([1] * 10 + [0] * 40, 0.25, rng, k=10)
    worked = len(idx) - 10 == 30
    idx, actual = sample_at_proportion([1] * 20 + [0] * 100, 0.1, rng, k=20)
    exhausted = actual == 20 / 120 and len(idx) == 120
    bad = 0
    for _ in range(10_000):
        n1, n0 = int(rng.integers(1, 60)), int(rng.integers(0, 120))
        i = float(rng.uniform(0.001, 0.999))
        k = int(rng.integers(1, n1 + 1))
        labels = np.array([1] * n1 + [0] * n0)
        rng.shuffle(labels)
        idx, actual = sample_at_proportion(labels, i, rng, k=k)
        m0 = min(label0_count(k, i), n0)
        if int(labels[idx].sum()) != k or len(idx) - k != m0 or actual != k / (k + m0) \
                or len(set(idx.tolist())) != len(idx):
            bad += 1
    record(2, worked and exhausted and bad == 0,
           f"(i=0.25,k=10) -> 30 label-0 {worked}; exhaustion k/(k+n0) exact {exhausted}; "
           f"{bad} mismatches in 10000 random cases")


def test_ac03_metrics_oracle():
    rng = np.random.default_rng(3)
    bad, worst = 0, 0.0
    for _ in range(600):
        n = int(rng.integers(1, 201))
        truth = rng.integers(0, 2, n)
        probs = np.round(rng.random(n), int(rng.integers(1, 4)))  # coarse grid forces ties
        pred = (probs > 0.5).astype(int)
        m = compute_metrics(probs, pred, truth)
        want = confusion_metrics(pred.tolist(), truth.tolist())
        for name, v in want.items():
            got = getattr(m, name)
            if (v is None) != (name in m.degenerate) or (v is not None and got != v):
                bad += 1
        if 0 < truth.sum() < n:
            worst = max(worst, abs(roc_auc_rank(probs, truth) - auc_pairs(probs.tolist(), truth.tolist())))
    record(3, bad == 0 and worst <= 1e-12,
           f"600 prediction sets: {bad} exact-count mismatches, max |AUC - pairwise| {worst:.1e} (<= 1e-12)")


def test_ac04_ols_oracle():
    rng = np.random.default_rng(4)
    worst_b = worst_se = worst_hc = 0.0
    for _ in range(120):
        k = int(rng.integers(1, 11))
        n = int(rng.integers(k + 5, 201))
        X = np.column_stack([np.ones(n), rng.normal(size=(n, k - 1))])
        y = X @ rng.normal(size=k) + rng.normal(size=n) * rng.uniform(0.1, 3)
        cl = rng.integers(0, int(rng.integers(2, 30)), n)
        cl[:2] = [0, 1]
        names = [f"x{j}" for j in range(k)]
        r = ols_cluster(DesignMatrix(y, X, names, clusters=cl))
        worst_b = max(worst_b, np.abs(np.array([c.estimate for c in r.coefficients])
                                      - ols_normal_equations(X, y)).max())
        worst_se = max(worst_se, np.abs(np.array([c.se for c in r.coefficients])
                                        - cr1_sandwich(X, y, cl.tolist())).max())
        s = ols_cluster(DesignMatrix(y, X, names, clusters=np.arange(n)))
        worst_hc = max(worst_hc, np.abs(np.array([c.se for c in s.coefficients]) - hc1(X, y)).max())
    ok = worst_b <= 1e-8 and worst_se <= 1e-8 and worst_hc <= 1e-10
    record(4, ok, f"120 designs: coef err {worst_b:.1e}, CR1 SE err {worst_se:.1e} (<= 1e-8), "
                  f"singleton vs HC1 {worst_hc:.1e} (<= 1e-10)")


def test_ac05_fixed_effects_oracle():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(60):
        n_ent, k = int(rng.integers(3, 25)), int(rng.integers(1, 5))
        ent = np.repeat(np.arange(n_ent), rng.integers(2, 8, n_ent))
        alpha = rng.normal(size=n_ent)[ent] * 3
        X = rng.normal(size=(len(ent), k)) + alpha[:, None]
        y = X @ rng.normal(size=k) + alpha + rng.normal(size=len(ent))
        r = fixed_effects(DesignMatrix(y, X, [f"x{j}" for j in range(k)], entities=ent))
        got = np.array([c.estimate for c in r.coefficients])
        worst = max(worst, np.abs(got - lsdv(X, y, ent.tolist())).max())
    record(5, worst <= 1e-8, f"60 panels: max |within - LSDV| {worst:.1e} (<= 1e-8)")


def test_ac06_percentiles():
    ex1 = percentile_normalize([10, 20, 30], [0, 0, 0]).tolist() == [1 / 3, 2 / 3, 1.0]
    ex2 = percentile_normalize([5, 5, 10], [0, 0, 0]).tolist() == [0.5, 0.5, 1.0]
    rng = np.random.default_rng(6)
    bad = 0
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        groups = rng.integers(0, int(rng.integers(1, 5)), n)
        vals = rng.integers(-30, 30, n) / 8.0
        out = percentile_normalize(vals, groups)
        if not (np.array_equal(out, percentile_normalize(np.exp(vals), groups))
                and np.array_equal(out, percentile_normalize(vals ** 3 + vals, groups))):
            bad += 1
        for g in np.unique(groups):
            m = groups == g
            size = int(m.sum())
            if out[m].tolist() != percentile_ranks(vals[m].tolist()):
                bad += 1
            if len(np.unique(vals[m])) == size and sorted(out[m].tolist()) != [(j + 1) / size for j in range(size)]:
                bad += 1
    record(6, ex1 and ex2 and bad == 0,
           f"examples [1/3,2/3,1] {ex1} and [0.5,0.5,1] {ex2}; 1000 grouped samples, {bad} violations")


def test_ac07_tfidf_hand_values():
    m = fit_vocabulary(["a b", "a"], TfIdfConfig(min_df=1))
    v = m.transform("a b")
    idf_ok = abs(m.idf[m.vocabulary["b"]] - (math.log(1.5) + 1)) < 1e-12 and m.idf[m.vocabulary["a"]] == 1.0
    w_ok = np.allclose(v.values, [0.5798, 0.8148], rtol=0, atol=1e-4)
    record(7, idf_ok and w_ok and tokenize("A b") == ["a", "b"],
           f"idf(b) = ln(3/2)+1 {idf_ok}; weights {np.round(v.values, 5).tolist()} vs [0.5798, 0.8148]")


def _constant_ensemble(probs):
    tfidf = fit_vocabulary(["a b", "a b"], TfIdfConfig(min_df=1))
    svm, lr, rf, gb = probs

    def logit(p):
        return math.log(p / (1 - p))
    comps = {"linear_svm": LinearModel("linear_svm", np.zeros(2), logit(svm), None, 0),
             "logistic_regression": LinearModel("logistic_regression", np.zeros(2), logit(lr), None, 0),
             "random_forest": ForestModel([Tree.constant(rf)], 2, 0),
             "gbdt": GBDTModel([], 0.1, logit(gb), 2, 0)}
    return EnsembleModel(tfidf, comps, seed=0)


def test_ac08_ensemble_semantics():
    p = _constant_ensemble((0.9, 0.8, 0.7, 0.6)).predict("a b")
    mean_ok = abs(p.probability - 0.75) < 1e-12 and p.label == 1
    tie = _constant_ensemble((0.5, 0.5, 0.5, 0.5)).predict("a")
    tie_ok = tie.probability == 0.5 and tie.label == 0
    below = _constant_ensemble((0.9, 0.1, 0.5, 0.5)).predict("a")
    rng = np.random.default_rng(8)
    rand_ok = all(average_probability(q) == math.fsum(q) / 4 for q in rng.random((500, 4)).tolist())
    record(8, mean_ok and tie_ok and below.label == 0 and rand_ok,
           f"(0.9,0.8,0.7,0.6) -> {p.probability:.12f} label {p.label}; all 0.5 -> label {tie.label}; "
           f"mean-of-four on 500 random sets {rand_ok}")


def test_ac09_fingerprint(fixture_abstracts):
    rng = np.random.default_rng(9)
    vocab = ["delve", "intricate", "also", "very", "thus", "cell", "gene", "x1"]
    bad = 0
    for _ in range(200):
        def corpus():
            return [" ".join(rng.choice(vocab, size=int(rng.integers(0, 8)))) for _ in range(int(rng.integers(1, 40)))]
        orig, pol = corpus(), corpus()
        t = doc_frequency_shift(orig, pol)
        for w in vocab:
            if t.shift(w) != doc_freq_shift([d.split() for d in orig], [d.split() for d in pol], w):
                bad += 1
    pairs = build_pairs(fixture_abstracts[:400], StubBackend(seed=9), PromptSet.from_file(), seed=9)
    t = doc_frequency_shift([d.text for d in pairs if d.label == 0], [d.text for d in pairs if d.label == 1])
    wrong = [w for w in DEFAULT_INSERTIONS if not t.shift(w) > 0] + \
            [w for w in DEFAULT_DELETIONS if not t.shift(w) < 0]
    record(9, bad == 0 and not wrong,
           f"200 random corpora, {bad} mismatches vs brute force; stub fixture sign errors: {wrong or 'none'}")


def test_ac10_determinism(tmp_path):
    a = run_pipeline(tmp_path / "a", seed=10, jobs=1)
    b = run_pipeline(tmp_path / "b", seed=10, jobs=1)
    c = run_pipeline(tmp_path / "c", seed=10, jobs=4)
    diff = sorted({k for k in a if a[k] != b[k] or a[k] != c[k]})
    record(10, not diff, f"{len(a)} pipeline outputs byte-identical across 2 runs and 1 vs 4 threads"
                         + (f"; differing: {diff}" if diff else ""))


AC11_PROBES = [
    ("CN", date(2024, 6, 1), True), ("CN", date(2022, 11, 30), True),
    ("IT", date(2023, 3, 30), False), ("IT", date(2023, 3, 31), True), ("IT", date(2023, 4, 28), True),
    ("IT", date(2023, 4, 29), False),
    ("UA", date(2023, 2, 18), True), ("UA", date(2023, 2, 19), False),
    ("SA", date(2023, 8, 11), True), ("SA", date(2023, 8, 12), False),
    ("EG", date(2023, 11, 1), True), ("EG", date(2023, 11, 2), False),
    ("CM", date(2023, 11, 6), True), ("CM", date(2023, 11, 7), False),
    ("VN", date(2023, 11, 6), True), ("VN", date(2023, 11, 7), False),
    ("IR", date(2025, 1, 1), True), ("RU", date(2025, 1, 1), True),
    ("US", date(2023, 6, 1), False),
]


def test_ac11_access_policy():
    policy = default_policy(strict=True)
    wrong = [(c, d.isoformat()) for c, d, want in AC11_PROBES if policy.is_restricted(c, d) != want]
    countries = {c for c, _, _ in AC11_PROBES} - {"US"}
    record(11, not wrong and len(countries) == 9,
           f"{len(AC11_PROBES)} probes over {len(countries)} restricted countries; wrong: {wrong or 'none'}")
