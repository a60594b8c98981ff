"""The four component classifiers, the probability-averaging ensemble, and model files."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.special import expit

from . import __version__
from .corpus import Document, corpus_fingerprint
from .seeding import derive_seed, rng_for
from .trees import SortedEntries, Tree, build_tree, predict_trees
from .vectorize import SparseVector, TfIdfConfig, TfIdfModel, fit_vocabulary

KINDS = ("linear_svm", "logistic_regression", "random_forest", "gbdt")
THRESHOLD = 0.5
MAGIC = b"FPDETECT1"
FORMAT_VERSION = 1

DEFAULT_HYPER = {
    "linear_svm": {"C": 1.0, "tol": 0.1, "max_iter": 1000, "calibration_folds": 5},
    "logistic_regression": {"l2": 1e-4, "max_iter": 1000, "tol": 1e-6},
    "random_forest": {"n_estimators": 100, "max_features": "sqrt", "max_depth": None,
                      "bootstrap": True},
    "gbdt": {"n_estimators": 100, "max_depth": 3, "learning_rate": 0.1},
}


class ModelFileError(ValueError):
    pass


# ---------------------------------------------------------------------------
# component models

class ComponentModel:
    kind: str

    def __init__(self, n_features: int, seed: int):
        self.n_features = n_features
        self.seed = seed

    def _check(self, X) -> sp.csr_matrix:
        X = sp.csr_matrix(X)
        if X.shape[1] != self.n_features:
            raise ValueError(f"{self.kind}: expected {self.n_features} features, got {X.shape[1]}")
        return X

    def proba(self, X) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n_features": self.n_features, "seed": self.seed,
                "params": self.params()}


class LinearModel(ComponentModel):
    """Linear score ``x.w + bias``; SVMs add a logistic calibration ``(a, b)``."""

    def __init__(self, kind: str, weights: np.ndarray, bias: float,
                 calibration: tuple[float, float] | None, seed: int):
        super().__init__(len(weights), seed)
        self.kind = kind
        self.weights = np.asarray(weights, dtype=float)
        self.bias = float(bias)
        self.calibration = calibration

    def decision(self, X) -> np.ndarray:
        return self._check(X) @ self.weights + self.bias

    def proba(self, X) -> np.ndarray:
        score = self.decision(X)
        if self.calibration is not None:
            a, b = self.calibration
            score = a * score + b
        return expit(score)

    def params(self) -> dict:
        return {"weights": [float(x) for x in self.weights], "bias": self.bias,
                "calibration": None if self.calibration is None else [float(c) for c in self.calibration]}


class ForestModel(ComponentModel):
    kind = "random_forest"

    def __init__(self, trees: list[Tree], n_features: int, seed: int):
        super().__init__(n_features, seed)
        self.trees = trees

    def proba(self, X) -> np.ndarray:
        leaf = predict_trees(self.trees, self._check(X))
        return leaf.mean(axis=1)

    def params(self) -> dict:
        return {"trees": [t.to_dict() for t in self.trees]}


class GBDTModel(ComponentModel):
    kind = "gbdt"

    def __init__(self, trees: list[Tree], learning_rate: float, base_score: float,
                 n_features: int, seed: int):
        super().__init__(n_features, seed)
        self.trees = trees
        self.learning_rate = float(learning_rate)
        self.base_score = float(base_score)

    def raw_score(self, X) -> np.ndarray:
        X = self._check(X)
        if not self.trees:
            return np.full(X.shape[0], self.base_score)
        return self.base_score + self.learning_rate * predict_trees(self.trees, X).sum(axis=1)

    def proba(self, X) -> np.ndarray:
        return expit(self.raw_score(X))

    def params(self) -> dict:
        return {"trees": [t.to_dict() for t in self.trees],
                "learning_rate": self.learning_rate, "base_score": self.base_score}


def component_from_dict(d: dict) -> ComponentModel:
    kind, p = d["kind"], d["params"]
    if kind in ("linear_svm", "logistic_regression"):
        cal = p["calibration"]
        return LinearModel(kind, np.array(p["weights"], dtype=float), p["bias"],
                           None if cal is None else tuple(cal), d["seed"])
    if kind == "random_forest":
        return ForestModel([Tree.from_dict(t) for t in p["trees"]], d["n_features"], d["seed"])
    if kind == "gbdt":
        return GBDTModel([Tree.from_dict(t) for t in p["trees"]], p["learning_rate"],
                         p["base_score"], d["n_features"], d["seed"])
    raise ModelFileError(f"unknown component kind {kind!r}")


def component_proba(model: ComponentModel, x: SparseVector) -> float:
    if x.dim != model.n_features:
        raise ValueError(f"vector dimension {x.dim} != model dimension {model.n_features}")
    return float(model.proba(x.as_row())[0])


# ---------------------------------------------------------------------------
# training

def _validate_training(X, y) -> tuple[sp.csr_matrix, np.ndarray]:
    X = sp.csr_matrix(X, dtype=float)
    y = np.asarray(y)
    if X.shape[0] != len(y):
        raise ValueError(f"X has {X.shape[0]} rows but y has {len(y)} labels")
    if len(y) < 2:
        raise ValueError("need at least two training examples")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    if len(np.unique(y)) < 2:
        raise ValueError("training labels contain a single class")
    if not np.isfinite(X.data).all():
        raise ValueError("non-finite feature values")
    return X, y.astype(float)


def _svm_dual_cd(X: sp.csr_matrix, y01: np.ndarray, C: float, tol: float, max_iter: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Hinge-loss L2 SVM by dual coordinate descent; bias is a constant feature of 1."""
    y = np.where(y01 > 0, 1.0, -1.0)
    n, d = X.shape
    rows = [(X.indices[X.indptr[i]:X.indptr[i + 1]], X.data[X.indptr[i]:X.indptr[i + 1]])
            for i in range(n)]
    qii = [float(v @ v) + 1.0 for _, v in rows]
    w = np.zeros(d)
    b = 0.0
    alpha = [0.0] * n
    for _ in range(max_iter):
        pg_max, pg_min = -math.inf, math.inf
        for i in rng.permutation(n).tolist():
            idx, v = rows[i]
            yi = y[i]
            g = yi * (float(w[idx] @ v) + b) - 1.0
            a = alpha[i]
            if a == 0.0:
                pg = min(g, 0.0)
            elif a >= C:
                pg = max(g, 0.0)
            else:
                pg = g
            pg_max = max(pg_max, pg)
            pg_min = min(pg_min, pg)
            if pg != 0.0:
                new = min(max(a - g / qii[i], 0.0), C)
                step = (new - a) * yi
                alpha[i] = new
                w[idx] += step * v
                b += step
        if pg_max - pg_min <= tol:
            break
    return w, b


def fit_platt(scores: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Logistic calibration ``p = sigmoid(a*score + b)`` with Platt's smoothed targets."""
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y)
    n1 = float((y == 1).sum())
    n0 = float(len(y) - n1)
    t = np.where(y == 1, (n1 + 1.0) / (n1 + 2.0), 1.0 / (n0 + 2.0))

    def nll(theta):
        z = theta[0] * scores + theta[1]
        r = expit(z) - t
        return float(np.sum(np.logaddexp(0.0, z) - t * z)), np.array([r @ scores, r.sum()])

    x0 = np.array([0.0, math.log((n1 + 1.0) / (n0 + 1.0))])
    res = minimize(nll, x0, jac=True, method="L-BFGS-B",
                   options={"maxiter": 1000, "gtol": 1e-10, "ftol": 1e-15})
    return float(res.x[0]), float(res.x[1])


def _stratified_folds(y: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    fold = np.empty(len(y), dtype=np.int64)
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        fold[idx[rng.permutation(len(idx))]] = np.arange(len(idx)) % k
    return fold


def _train_svm(X, y, hyper, seed, n_jobs) -> LinearModel:
    C, tol, max_iter = hyper["C"], hyper["tol"], hyper["max_iter"]
    k = min(int(hyper["calibration_folds"]), int((y == 1).sum()), int((y == 0).sum()))

    def fit(rows, key):
        return _svm_dual_cd(X[rows], y[rows], C, tol, max_iter, rng_for(seed, key))

    if k >= 2:
        fold = _stratified_folds(y, k, rng_for(seed, "folds"))

        def oof(f):
            w, b = fit(np.flatnonzero(fold != f), f"fold{f}")
            held = np.flatnonzero(fold == f)
            return held, X[held] @ w + b

        scores = np.empty(len(y))
        with ThreadPoolExecutor(max_workers=max(1, n_jobs)) as pool:
            for held, s in pool.map(oof, range(k)):
                scores[held] = s
        w, b = fit(np.arange(len(y)), "full")
    else:
        # too few examples per class for out-of-fold scores: calibrate in-sample
        w, b = fit(np.arange(len(y)), "full")
        scores = X @ w + b
    return LinearModel("linear_svm", w, b, fit_platt(scores, y), seed)


def _train_logistic(X, y, hyper, seed) -> LinearModel:
    n, d = X.shape
    l2 = hyper["l2"]
    Xt = X.T.tocsr()

    def objective(theta):
        w, b = theta[:d], theta[d]
        z = X @ w + b
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))
        r = expit(z) - y
        grad = np.empty(d + 1)
        grad[:d] = Xt @ r / n + l2 * w
        grad[d] = r.mean()
        return loss, grad

    res = minimize(objective, np.zeros(d + 1), jac=True, method="L-BFGS-B",
                   options={"maxiter": hyper["max_iter"], "gtol": hyper["tol"], "ftol": 1e-15})
    return LinearModel("logistic_regression", res.x[:d].copy(), float(res.x[d]), None, seed)


def _max_features(spec, n_features: int) -> int | None:
    if spec is None:
        return None
    if spec == "sqrt":
        return max(1, int(math.sqrt(n_features)))
    if spec == "log2":
        return max(1, int(math.log2(n_features)))
    return max(1, min(int(spec), n_features))


def _train_forest(X, y, hyper, seed, n_jobs) -> ForestModel:
    entries = SortedEntries(X)
    n = X.shape[0]
    max_features = _max_features(hyper["max_features"], X.shape[1])

    def grow(t):
        rng = rng_for(seed, t)
        if hyper["bootstrap"]:
            weight = np.bincount(rng.integers(0, n, n), minlength=n).astype(float)
        else:
            weight = np.ones(n)
        tree, _ = build_tree(entries, weight, y, max_depth=hyper["max_depth"],
                             max_features=max_features, rng=rng)
        return tree

    with ThreadPoolExecutor(max_workers=max(1, n_jobs)) as pool:
        trees = list(pool.map(grow, range(hyper["n_estimators"])))
    return ForestModel(trees, X.shape[1], seed)


def _train_gbdt(X, y, hyper, seed) -> GBDTModel:
    entries = SortedEntries(X)
    n = X.shape[0]
    lr = hyper["learning_rate"]
    prior = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
    base = math.log(prior / (1.0 - prior))
    raw = np.full(n, base)
    ones = np.ones(n)
    trees = []
    for _ in range(hyper["n_estimators"]):
        p = expit(raw)
        resid = y - p
        hess = p * (1.0 - p)

        def newton_step(rows, resid=resid, hess=hess):
            den = hess[rows].sum()
            return float(resid[rows].sum() / den) if den > 1e-150 else 0.0

        tree, row_leaf = build_tree(entries, ones, resid, max_depth=hyper["max_depth"],
                                    leaf_value=newton_step)
        trees.append(tree)
        raw = raw + lr * tree.value[row_leaf]
    return GBDTModel(trees, lr, base, X.shape[1], seed)


def train_component(kind: str, X, y, hyper: dict | None = None, seed: int = 0,
                    n_jobs: int = 1) -> ComponentModel:
    if kind not in KINDS:
        raise ValueError(f"unknown component kind {kind!r}")
    X, y = _validate_training(X, y)
    h = dict(DEFAULT_HYPER[kind])
    h.update(hyper or {})
    if kind == "linear_svm":
        return _train_svm(X, y, h, seed, n_jobs)
    if kind == "logistic_regression":
        return _train_logistic(X, y, h, seed)
    if kind == "random_forest":
        return _train_forest(X, y, h, seed, n_jobs)
    return _train_gbdt(X, y, h, seed)


# ---------------------------------------------------------------------------
# ensemble

@dataclass(frozen=True)
class Prediction:
    probability: float
    label: int


def average_probability(probs: Sequence[float]) -> float:
    """Arithmetic mean; exactly rounded so component order never matters."""
    return math.fsum(probs) / len(probs)


def to_prediction(probability: float) -> Prediction:
    return Prediction(probability, int(probability > THRESHOLD))


@dataclass
class EnsembleConfig:
    tfidf: TfIdfConfig = field(default_factory=TfIdfConfig)
    hyper: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_HYPER))

    def to_dict(self) -> dict:
        return {"tfidf": self.tfidf.to_dict(), "hyper": self.hyper}

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleConfig":
        hyper = copy.deepcopy(DEFAULT_HYPER)
        for kind, h in d.get("hyper", {}).items():
            hyper[kind].update(h)
        return cls(TfIdfConfig.from_dict(d["tfidf"]) if "tfidf" in d else TfIdfConfig(), hyper)


class EnsembleModel:
    def __init__(self, tfidf: TfIdfModel, components: dict[str, ComponentModel], seed: int,
                 metadata: dict | None = None):
        if tuple(sorted(components)) != tuple(sorted(KINDS)):
            raise ValueError(f"ensemble needs exactly one component of each kind {KINDS}")
        for kind, comp in components.items():
            if comp.kind != kind:
                raise ValueError(f"component stored under {kind!r} has kind {comp.kind!r}")
        self.tfidf = tfidf
        self.components = {k: components[k] for k in KINDS}
        self.seed = seed
        self.metadata = metadata or {}
        self.threshold = THRESHOLD

    def component_probabilities(self, texts: Sequence[str]) -> np.ndarray:
        X = self.tfidf.transform_many(texts)
        return np.column_stack([self.components[k].proba(X) for k in KINDS])

    def predict_proba(self, texts: Sequence[str]) -> np.ndarray:
        comp = self.component_probabilities(texts)
        return np.array([average_probability(row) for row in comp.tolist()])

    def predict_many(self, texts: Sequence[str]) -> list[Prediction]:
        return [to_prediction(p) for p in self.predict_proba(texts).tolist()]

    def predict(self, text: str) -> Prediction:
        return self.predict_many([text])[0]

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "tfidf": self.tfidf.to_dict(),
            "components": [self.components[k].to_dict() for k in KINDS],
            "threshold": self.threshold,
            "seed": self.seed,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise ModelFileError(f"unsupported model format version {d.get('format_version')!r}")
        comps = [component_from_dict(c) for c in d["components"]]
        return cls(TfIdfModel.from_dict(d["tfidf"]), {c.kind: c for c in comps}, d["seed"],
                   d["metadata"])


def train_ensemble(pairs: Sequence[Document], config: EnsembleConfig | None = None,
                   seed: int = 0, n_jobs: int = 1) -> EnsembleModel:
    config = config or EnsembleConfig()
    labeled = [d for d in pairs if d.label is not None]
    if len(labeled) != len(pairs):
        raise ValueError("every training document needs a label")
    y = np.array([d.label for d in pairs])
    if len(set(y.tolist())) < 2:
        raise ValueError("training pairs must contain both labels")
    texts = [d.text for d in pairs]
    tfidf = fit_vocabulary(texts, config.tfidf)
    X = tfidf.transform_many(texts)
    components = {}
    for kind in KINDS:
        components[kind] = train_component(kind, X, y, config.hyper.get(kind),
                                           seed=derive_seed(seed, kind), n_jobs=n_jobs)
    metadata = {
        "package_version": __version__,
        "corpus_fingerprint": corpus_fingerprint(pairs),
        "n_train": len(pairs),
        "n_label1": int(y.sum()),
        "config": config.to_dict(),
        "train_ids": sorted(d.id for d in pairs),
    }
    return EnsembleModel(tfidf, components, seed, metadata)


# ---------------------------------------------------------------------------
# model files: MAGIC, payload length, sha256, newline, canonical JSON payload

def model_bytes(model: EnsembleModel) -> bytes:
    payload = json.dumps(model.to_dict(), sort_keys=True, separators=(",", ":"),
                         allow_nan=False, ensure_ascii=False).encode("utf-8")
    header = b"%s %d %s\n" % (MAGIC, len(payload), hashlib.sha256(payload).hexdigest().encode())
    return header + payload


def save_model(model: EnsembleModel, path: str | Path) -> None:
    Path(path).write_bytes(model_bytes(model))


def model_from_bytes(raw: bytes) -> EnsembleModel:
    head, sep, payload = raw.partition(b"\n")
    parts = head.split(b" ")
    if not sep or len(parts) != 3 or parts[0] != MAGIC:
        raise ModelFileError("not a model file (bad magic or header)")
    try:
        length = int(parts[1])
    except ValueError:
        raise ModelFileError("corrupt header length") from None
    if len(payload) != length:
        raise ModelFileError(f"payload is {len(payload)} bytes, header says {length} (truncated?)")
    if hashlib.sha256(payload).hexdigest().encode() != parts[2]:
        raise ModelFileError("payload checksum mismatch")
    try:
        return EnsembleModel.from_dict(json.loads(payload))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"malformed model payload: {exc}") from None


def load_model(path: str | Path) -> EnsembleModel:
    return model_from_bytes(Path(path).read_bytes())
