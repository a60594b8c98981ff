"""Randomized-proportion evaluation of a detector on a labeled test pool.

Each iteration draws a target share ``i ~ U(0, 1)`` of label-1 documents,
samples ``k`` label-1 and ``round(k * (1 - i) / i)`` label-0 documents
(falling back to the whole label-0 pool when that is too few), and scores
the detector on the sample. The report keeps every iteration plus the mean
and standard error of the mean of each metric.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .corpus import Document
from .seeding import rng_for

METRIC_NAMES = ("accuracy", "precision", "recall", "tn_rate", "fp_rate", "fn_rate", "f1",
                "roc_auc", "predicted_proportion", "true_proportion", "gap")


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    tn_rate: float
    fp_rate: float
    fn_rate: float
    f1: float
    roc_auc: float
    predicted_proportion: float
    true_proportion: float
    gap: float
    n: int = 0
    degenerate: tuple[str, ...] = ()

    def as_row(self) -> dict:
        row = {name: getattr(self, name) for name in METRIC_NAMES}
        row["n"] = self.n
        row["degenerate"] = ";".join(self.degenerate)
        return row


def roc_auc_rank(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney form of ROC-AUC; tied scores count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n1 = int((labels == 1).sum())
    n0 = len(labels) - n1
    if n1 == 0 or n0 == 0:
        return math.nan
    ranks = rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def compute_metrics(probabilities: Sequence[float], predicted: Sequence[int],
                    truth: Sequence[int]) -> Metrics:
    p = np.asarray(predicted, dtype=int)
    t = np.asarray(truth, dtype=int)
    if len(p) != len(t) or len(p) != len(probabilities) or len(p) == 0:
        raise ValueError("probabilities, predictions and labels need equal nonzero length")
    tp = int(((p == 1) & (t == 1)).sum())
    tn = int(((p == 0) & (t == 0)).sum())
    fp = int(((p == 1) & (t == 0)).sum())
    fn = int(((p == 0) & (t == 1)).sum())
    n = len(t)
    degenerate = []

    def ratio(num, den, name):
        if den == 0:
            degenerate.append(name)
            return 0.0
        return num / den

    precision = ratio(tp, tp + fp, "precision")
    recall = ratio(tp, tp + fn, "recall")
    fn_rate = ratio(fn, tp + fn, "fn_rate")
    tn_rate = ratio(tn, tn + fp, "tn_rate")
    fp_rate = ratio(fp, tn + fp, "fp_rate")
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        degenerate.append("f1")
    auc = roc_auc_rank(probabilities, t)
    if math.isnan(auc):
        auc = 0.0
        degenerate.append("roc_auc")
    predicted_prop = float(p.mean())
    true_prop = float(t.mean())
    return Metrics(
        accuracy=(tp + tn) / n, precision=precision, recall=recall, tn_rate=tn_rate,
        fp_rate=fp_rate, fn_rate=fn_rate, f1=f1, roc_auc=auc,
        predicted_proportion=predicted_prop, true_proportion=true_prop,
        gap=abs(predicted_prop - true_prop), n=n, degenerate=tuple(degenerate))


def required_label0(k: int, proportion: float) -> int:
    # round() is round-half-to-even
    return int(round(k * (1.0 - proportion) / proportion))


def sample_at_proportion(labels: Sequence[int], proportion: float, rng: np.random.Generator,
                         k: int | None = None) -> tuple[np.ndarray, float]:
    """Indices of a sample whose label-1 share is ``proportion`` when the pool allows.

    ``k`` (number of label-1 draws) is uniform on [1, n1] unless given.
    Returns the sampled indices (label-1 first) and the realized share.
    """
    if not 0.0 < proportion < 1.0:
        raise ValueError(f"proportion must be in (0, 1), got {proportion}")
    labels = np.asarray(labels)
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if len(pos) == 0:
        raise ValueError("test pool has no label-1 documents")
    if k is None:
        k = int(rng.integers(1, len(pos) + 1))
    if not 1 <= k <= len(pos):
        raise ValueError(f"k={k} outside [1, {len(pos)}]")
    need = required_label0(k, proportion)
    take1 = rng.choice(pos, size=k, replace=False)
    if need <= len(neg):
        take0 = rng.choice(neg, size=need, replace=False)
    else:
        take0 = neg.copy()
    actual = k / (k + len(take0))
    return np.concatenate([take1, take0]), actual


@dataclass
class EvalReport:
    iterations: list[Metrics]
    config: dict = field(default_factory=dict)

    def aggregate(self) -> dict:
        """Mean and standard error per metric over iterations where it is defined."""
        out = {}
        for name in METRIC_NAMES:
            vals = np.array([getattr(m, name) for m in self.iterations
                             if name not in m.degenerate], dtype=float)
            n = len(vals)
            mean = float(vals.mean()) if n else math.nan
            se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
            out[name] = {"mean": mean, "se": se, "n": n}
        return out

    def to_dict(self) -> dict:
        return {
            "kind": "eval_report",
            "config": self.config,
            "aggregate": self.aggregate(),
            "iterations": [{**{k: v for k, v in asdict(m).items() if k != "degenerate"},
                            "degenerate": list(m.degenerate)} for m in self.iterations],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        its = [Metrics(**{**m, "degenerate": tuple(m.get("degenerate", ()))})
               for m in d["iterations"]]
        return cls(its, d.get("config", {}))

    def to_json(self) -> str:
        return json.dumps(_json_safe(self.to_dict()), sort_keys=True, indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["iteration", *METRIC_NAMES, "n", "degenerate"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for i, m in enumerate(self.iterations):
            row = m.as_row()
            w.writerow([i, *(_fmt(row[c]) for c in METRIC_NAMES), row["n"], row["degenerate"]])
        agg = self.aggregate()
        w.writerow(["mean", *(_fmt(agg[c]["mean"]) for c in METRIC_NAMES), "", ""])
        w.writerow(["se", *(_fmt(agg[c]["se"]) for c in METRIC_NAMES), "", ""])
        return buf.getvalue()


def _fmt(x) -> str:
    return "" if isinstance(x, float) and math.isnan(x) else repr(float(x))


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


@dataclass(frozen=True)
class ScoredPool:
    """Test pool with the detector's outputs already attached."""

    ids: tuple[str, ...]
    labels: np.ndarray
    probabilities: np.ndarray
    predicted: np.ndarray


def score_with_model(model, test: Sequence[Document]) -> ScoredPool:
    train_ids = set(model.metadata.get("train_ids", ()))
    overlap = [d.id for d in test if d.id in train_ids]
    if overlap:
        raise ValueError(f"{len(overlap)} test documents were used in training, e.g. {overlap[0]}")
    preds = model.predict_many([d.text for d in test])
    return _pool(test, [p.probability for p in preds], [p.label for p in preds])


def score_with_predictions(predictions: Mapping[str, tuple[float, int]],
                           test: Sequence[Document]) -> ScoredPool:
    missing = [d.id for d in test if d.id not in predictions]
    if missing:
        raise ValueError(f"{len(missing)} test documents have no prediction, e.g. {missing[0]}")
    return _pool(test, [predictions[d.id][0] for d in test], [predictions[d.id][1] for d in test])


def _pool(test, probs, preds) -> ScoredPool:
    if not test:
        raise ValueError("empty test pool")
    labels = [d.label for d in test]
    if any(lab is None for lab in labels):
        raise ValueError("every test document needs a label")
    return ScoredPool(tuple(d.id for d in test), np.array(labels, dtype=int),
                      np.array(probs, dtype=float), np.array(preds, dtype=int))


def load_predictions(path: str | Path) -> dict[str, tuple[float, int]]:
    """Read a ``{id, probability, label}`` JSONL prediction file."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                prob = float(rec["probability"])
                label = int(rec["label"]) if "label" in rec else int(prob > 0.5)
                out[str(rec["id"])] = (prob, label)
            except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad prediction record ({exc})") from None
            if not 0.0 <= prob <= 1.0 or label not in (0, 1):
                raise ValueError(f"{path}:{lineno}: probability/label out of range")
    return out


def write_predictions(ids: Sequence[str], predictions, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, p in zip(ids, predictions):
            fh.write(json.dumps({"id": doc_id, "probability": p.probability, "label": p.label},
                                sort_keys=True))
            fh.write("\n")


def run_simulation(pool: ScoredPool, n_iter: int = 10_000, seed: int = 0,
                   n_jobs: int = 1) -> EvalReport:
    """Iteration ``j`` uses a generator seeded by ``(seed, j)`` so any schedule gives the same report."""
    if len(pool.labels) == 0:
        raise ValueError("empty test pool")
    n1 = int((pool.labels == 1).sum())
    if n1 == 0:
        raise ValueError("test pool has no label-1 documents")

    def one(j: int) -> Metrics:
        rng = rng_for(seed, j)
        proportion = float(rng.uniform(0.0, 1.0))
        while proportion == 0.0:
            proportion = float(rng.uniform(0.0, 1.0))
        idx, _ = sample_at_proportion(pool.labels, proportion, rng)
        return compute_metrics(pool.probabilities[idx], pool.predicted[idx], pool.labels[idx])

    with ThreadPoolExecutor(max_workers=max(1, n_jobs)) as ex:
        iterations = list(ex.map(one, range(n_iter)))
    config = {"n_iter": n_iter, "seed": seed, "n_label1": n1,
              "n_label0": int((pool.labels == 0).sum()),
              "k_range": [1, n1], "rounding": "half_to_even",
              "uncertainty": "standard error of the per-iteration mean"}
    return EvalReport(iterations, config)


def run_stratified(pool: ScoredPool, strata: Mapping[str, str], n_iter: int = 10_000,
                   seed: int = 0, n_jobs: int = 1) -> dict[str, EvalReport]:
    """Separate simulations per stratum (e.g. access / no access) of the test pool."""
    keys = [strata[i] for i in pool.ids]
    out = {}
    for key in sorted(set(keys)):
        mask = np.array([k == key for k in keys])
        sub = ScoredPool(tuple(i for i, m in zip(pool.ids, mask) if m), pool.labels[mask],
                         pool.probabilities[mask], pool.predicted[mask])
        out[key] = run_simulation(sub, n_iter=n_iter, seed=seed, n_jobs=n_jobs)
    return out
