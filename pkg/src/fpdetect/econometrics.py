"""Percentile outcomes, access-gap OLS and author fixed-effects panels.

Clustered covariances use the CR1 factor (G/(G-1)) * ((n-1)/(n-k)) and
p-values come from a t distribution with G-1 degrees of freedom. For the
within estimator k counts only the slope regressors, not the absorbed
fixed effects.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.stats import rankdata

from .corpus import (ARXIV_SUBJECTS, CHATGPT_LAUNCH, COMPUTATIONAL_SUBFIELDS, AccessPolicy, Document,
                     access_status, default_policy, in_analysis_period, is_asian_similar_demand,
                     small_country_exclusion)

SPECS = ("access_biorxiv", "access_arxiv", "access_combined", "outcome_panel")
OUTCOMES = ("citations", "impact_factor", "views_abstract", "views_pdf", "views_full")
ATTENTION = ("views_abstract", "views_pdf", "views_full")


class DesignError(ValueError):
    pass


class CollinearityWarning(UserWarning):
    pass


# percentile normalization -----------------------------------------------

def percentile_normalize(values: Sequence[float], groups: Sequence) -> np.ndarray:
    """Within-group average rank divided by group size; the top value maps to 1.0.

    Missing values (None or nan) stay nan and do not count toward group sizes.
    """
    vals = np.array([math.nan if v is None else float(v) for v in values], dtype=float)
    if len(vals) != len(groups):
        raise ValueError("values and groups must align")
    out = np.full(len(vals), math.nan)
    members: dict = {}
    for i, (v, g) in enumerate(zip(vals, groups)):
        if not math.isnan(v):
            members.setdefault(g, []).append(i)
    for idx in members.values():
        idx = np.array(idx)
        out[idx] = rankdata(vals[idx], method="average") / len(idx)
    return out


def subfield_key(doc: Document) -> str:
    return doc.subfields[0] if doc.subfields else ""


def normalization_key(doc: Document, outcome: str) -> tuple:
    if outcome in ATTENTION:
        return (doc.posted_date.year, subfield_key(doc))
    if outcome == "impact_factor":
        year = doc.outcomes.publication_year if doc.outcomes and doc.outcomes.publication_year else doc.posted_date.year
        return (year, subfield_key(doc))
    if outcome == "citations":
        return (doc.posted_date.year, doc.posted_date.month, subfield_key(doc))
    raise ValueError(f"unknown outcome {outcome!r}")


def outcome_percentiles(docs: Sequence[Document], outcome: str) -> np.ndarray:
    vals = [getattr(d.outcomes, outcome) if d.outcomes else None for d in docs]
    return percentile_normalize(vals, [normalization_key(d, outcome) for d in docs])


# design matrices ----------------------------------------------------------

@dataclass
class DesignMatrix:
    y: np.ndarray
    X: np.ndarray
    names: list[str]
    clusters: np.ndarray | None = None
    entities: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] != len(self.y) or self.X.shape[1] != len(self.names):
            raise DesignError("response, regressors and names do not align")
        if len(set(self.names)) != len(self.names):
            raise DesignError("column names must be unique")
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.X))):
            raise DesignError("design contains non-finite entries")
        for attr in ("clusters", "entities"):
            v = getattr(self, attr)
            if v is not None:
                v = np.asarray(v)
                if len(v) != len(self.y):
                    raise DesignError(f"{attr} do not align with rows")
                setattr(self, attr, v)

    @property
    def n(self) -> int:
        return len(self.y)


def collinear_columns(X: np.ndarray, rtol: float = 1e-10) -> list[int]:
    """Indices of columns that are (numerically) spanned by earlier columns."""
    dropped, kept = [], []
    for j in range(X.shape[1]):
        col = X[:, j]
        scale = np.linalg.norm(col)
        if scale == 0:
            dropped.append(j)
            continue
        if kept:
            basis = X[:, kept]
            coef, *_ = np.linalg.lstsq(basis, col, rcond=None)
            resid = col - basis @ coef
            if np.linalg.norm(resid) <= rtol * scale * math.sqrt(len(col)):
                dropped.append(j)
                continue
        kept.append(j)
    return dropped


def drop_collinear(design: DesignMatrix, X_check: np.ndarray | None = None) -> DesignMatrix:
    bad = collinear_columns(design.X if X_check is None else X_check)
    if not bad:
        return design
    names = [design.names[j] for j in bad]
    warnings.warn(f"dropping collinear columns: {', '.join(names)}", CollinearityWarning, stacklevel=2)
    keep = [j for j in range(len(design.names)) if j not in set(bad)]
    meta = {**design.meta, "dropped_columns": design.meta.get("dropped_columns", []) + names}
    return DesignMatrix(design.y, design.X[:, keep], [design.names[j] for j in keep],
                        design.clusters, design.entities, meta)


@dataclass(frozen=True)
class DesignOptions:
    period: str = "full"
    rule: str = "all_authors"
    cluster: str = "last"  # last | first | none
    subset: str | None = None  # None | "asian"
    exclude_small_countries: bool = False
    small_country_min: int = 10
    outcome: str = "views_pdf"
    entity: str = "last"  # outcome panels: last | first author
    year_month_dummies: bool = True


def _author(doc: Document, which: str) -> str:
    if which == "last":
        return doc.author_last_id
    if which == "first":
        return doc.author_first_id
    raise ValueError(f"unknown author role {which!r}")


def _cluster_ids(docs: Sequence[Document], how: str) -> np.ndarray | None:
    if how == "none":
        return None
    return np.array([_author(d, how) for d in docs], dtype=object)


def _use(docs: Sequence[Document], predictions: Mapping[str, int] | None) -> np.ndarray:
    out = []
    for d in docs:
        p = predictions.get(d.id) if predictions is not None else d.label
        if p is None:
            raise DesignError(f"document {d.id} has no prediction")
        out.append(int(p))
    return np.array(out, dtype=float)


def build_design(docs: Sequence[Document], spec: str, options: DesignOptions = DesignOptions(),
                 predictions: Mapping[str, int] | None = None,
                 policy: AccessPolicy | None = None) -> DesignMatrix:
    """Assemble response, named regressors, clusters and entities for one specification.

    ``predictions`` maps document id to predicted use; documents' own labels
    are used when it is omitted.
    """
    if spec not in SPECS:
        raise ValueError(f"unknown spec {spec!r}; choose from {', '.join(SPECS)}")
    if options.period not in ("clean", "full"):
        raise ValueError(f"unknown period {options.period!r}")
    policy = policy or default_policy()
    pool = list(docs)
    meta: dict = {"spec": spec, "period": options.period, "rule": options.rule,
                  "cluster": options.cluster, "subset": options.subset, "n_input": len(pool)}
    if options.subset == "asian":
        pool = [d for d in pool if is_asian_similar_demand(d)]
    elif options.subset is not None:
        raise ValueError(f"unknown subset {options.subset!r}")
    if options.exclude_small_countries:
        excluded = small_country_exclusion(pool, policy, options.small_country_min)
        pool = [d for d in pool if not excluded(d)]
    if spec == "outcome_panel":
        return _outcome_panel(pool, options, predictions, meta)
    return _access_design(pool, spec, options, predictions, policy, meta)


def _access_design(pool, spec, options, predictions, policy, meta) -> DesignMatrix:
    sources = {"access_biorxiv": {"biorxiv"}, "access_arxiv": {"arxiv"},
               "access_combined": {"biorxiv", "arxiv"}}[spec]
    rows = [d for d in pool if d.source in sources and in_analysis_period(d.posted_date, options.period)]
    if not rows:
        raise DesignError(f"no documents left for {spec} ({options.period} period) after filters")
    y = _use(rows, predictions)
    cols: list[np.ndarray] = [np.ones(len(rows)),
                              np.array([float(access_status(policy, d, rule=options.rule)) for d in rows])]
    names = ["intercept", "without_access"]
    if spec in ("access_arxiv", "access_combined"):
        # non-exclusive subject labels, one indicator each
        for subj in ARXIV_SUBJECTS:
            cols.append(np.array([float(d.source == "arxiv" and subj in d.subfields) for d in rows]))
            names.append(subj)
    if spec in ("access_biorxiv", "access_combined"):
        cols.append(np.array([float(d.source == "biorxiv" and bool(set(d.subfields) & COMPUTATIONAL_SUBFIELDS))
                              for d in rows]))
        names.append("computational_biorxiv" if spec == "access_combined" else "computational")
    if options.year_month_dummies:
        months = sorted({(d.posted_date.year, d.posted_date.month) for d in rows})
        for ym in months[1:]:
            cols.append(np.array([float((d.posted_date.year, d.posted_date.month) == ym) for d in rows]))
            names.append(f"ym_{ym[0]:04d}_{ym[1]:02d}")
        meta["baseline_month"] = f"{months[0][0]:04d}-{months[0][1]:02d}"
    meta["n_rows"] = len(rows)
    design = DesignMatrix(y, np.column_stack(cols), names, _cluster_ids(rows, options.cluster), None, meta)
    return drop_collinear(design)


def _outcome_panel(pool, options, predictions, meta) -> DesignMatrix:
    if options.outcome not in OUTCOMES:
        raise ValueError(f"unknown outcome {options.outcome!r}")
    meta["outcome"] = options.outcome
    meta["entity"] = options.entity
    # percentiles are computed on the whole input before any period or panel filter
    pct = outcome_percentiles(pool, options.outcome)
    keep = []
    for d, v in zip(pool, pct):
        if math.isnan(v):
            continue
        if d.posted_date >= CHATGPT_LAUNCH and not in_analysis_period(d.posted_date, options.period):
            continue
        keep.append((d, v))
    meta["n_missing_outcome"] = int(np.isnan(pct).sum())
    pre, post = set(), set()
    for d, _ in keep:
        (post if d.posted_date >= CHATGPT_LAUNCH else pre).add(_author(d, options.entity))
    both = pre & post
    meta["n_entities_dropped"] = len((pre | post) - both)
    keep = [(d, v) for d, v in keep if _author(d, options.entity) in both]
    if not keep:
        raise DesignError("no entity has documents both before and after launch")
    rows = [d for d, _ in keep]
    y = np.array([v for _, v in keep])
    postv = np.array([float(d.posted_date >= CHATGPT_LAUNCH) for d in rows])
    use = _use(rows, predictions)
    X = np.column_stack([postv, use * postv])
    entities = np.array([_author(d, options.entity) for d in rows], dtype=object)
    clusters = entities if options.cluster in ("entity", options.entity) else _cluster_ids(rows, options.cluster)
    meta["n_rows"] = len(rows)
    return DesignMatrix(y, X, ["post", "use_x_post"], clusters, entities, meta)


# estimation ----------------------------------------------------------------

@dataclass(frozen=True)
class Coefficient:
    name: str
    estimate: float
    se: float
    t: float
    p: float
    identified: bool = True


@dataclass
class RegressionResult:
    coefficients: list[Coefficient]
    n: int
    n_groups: int
    r2: float
    adj_r2: float
    within_r2: float
    resid_se: float
    resid_df: int
    f_stat: float
    f_df: tuple[int, int]
    kind: str
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> Coefficient:
        for c in self.coefficients:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.coefficients]

    def to_dict(self) -> dict:
        def num(x):
            return None if isinstance(x, float) and not math.isfinite(x) else x
        return {"kind": self.kind, "n": self.n, "n_groups": self.n_groups, "r2": num(self.r2),
                "adj_r2": num(self.adj_r2), "within_r2": num(self.within_r2),
                "resid_se": num(self.resid_se), "resid_df": self.resid_df,
                "f_stat": num(self.f_stat), "f_df": list(self.f_df), "meta": self.meta,
                "coefficients": [{"name": c.name, "estimate": num(c.estimate), "se": num(c.se),
                                  "t": num(c.t), "p": num(c.p), "identified": c.identified}
                                 for c in self.coefficients]}


def cluster_covariance(X: np.ndarray, resid: np.ndarray, clusters: np.ndarray | None,
                       k: int | None = None) -> tuple[np.ndarray, int]:
    """CR1 sandwich; ``k`` defaults to the column count of ``X``.

    Without clusters every row is its own cluster, which reduces to HC1.
    """
    n, p = X.shape
    k = p if k is None else k
    bread = np.linalg.inv(X.T @ X)
    if clusters is None:
        scores = X * resid[:, None]
        G = n
    else:
        _, inv = np.unique(clusters.astype(str), return_inverse=True)
        G = int(inv.max()) + 1
        scores = np.zeros((G, p))
        np.add.at(scores, inv, X * resid[:, None])
    if G < 2:
        raise DesignError("clustered standard errors need at least 2 clusters")
    meat = scores.T @ scores
    factor = (G / (G - 1)) * ((n - 1) / (n - k))
    return factor * bread @ meat @ bread, G


def _coefficients(names, beta, cov, G, X, y) -> list[Coefficient]:
    """SEs at rounding level for their column's scale count as exact zeros; t and p are then undefined."""
    out = []
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    y_scale = max(float(np.abs(y).max(initial=0.0)), 1e-300)
    x_scale = np.maximum(np.abs(X).max(axis=0, initial=0.0), 1e-300)
    for name, b, s, xs in zip(names, beta, se, x_scale):
        if s > 1e-12 * y_scale / xs:
            t = b / s
            p = float(2 * stats.t.sf(abs(t), G - 1))
        else:
            s, t, p = 0.0, math.nan, math.nan
        out.append(Coefficient(name, float(b), float(s), float(t), p))
    return out


def _check_rank(X: np.ndarray, names: Sequence[str]) -> None:
    bad = collinear_columns(X)
    if bad:
        raise DesignError("design is rank deficient; collinear columns: "
                          + ", ".join(names[j] for j in bad))


def ols_cluster(design: DesignMatrix) -> RegressionResult:
    X, y = design.X, design.y
    n, k = X.shape
    if n <= k:
        raise DesignError(f"need more rows ({n}) than regressors ({k})")
    _check_rank(X, design.names)
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    cov, G = cluster_covariance(X, resid, design.clusters)
    rss = float(resid @ resid)
    has_const = any(np.all(X[:, j] == X[0, j]) and X[0, j] != 0 for j in range(k))
    tss = float(((y - y.mean()) ** 2).sum()) if has_const else float(y @ y)
    r2 = 1.0 - rss / tss if tss > 0 else math.nan
    df_model = k - 1 if has_const else k
    adj = 1.0 - (1.0 - r2) * (n - 1 if has_const else n) / (n - k) if tss > 0 else math.nan
    f = ((tss - rss) / df_model) / (rss / (n - k)) if df_model > 0 and rss > 0 else math.nan
    meta = {**design.meta, "covariance": "CR1" if design.clusters is not None else "HC1",
            "p_value_df": G - 1}
    return RegressionResult(_coefficients(design.names, beta, cov, G, X, y), n, G, r2, adj, math.nan,
                            math.sqrt(rss / (n - k)), n - k, f, (df_model, n - k), "ols", meta)


def demean(values: np.ndarray, entities: np.ndarray) -> np.ndarray:
    _, inv = np.unique(entities.astype(str), return_inverse=True)
    counts = np.bincount(inv)
    if values.ndim == 1:
        return values - (np.bincount(inv, weights=values) / counts)[inv]
    means = np.column_stack([np.bincount(inv, weights=values[:, j]) for j in range(values.shape[1])])
    return values - (means / counts[:, None])[inv]


def fixed_effects(design: DesignMatrix, drop_unidentified: bool = False) -> RegressionResult:
    """Within estimator with entity-clustered CR1 errors.

    A regressor that is constant within every entity is not identified: by
    default this raises; with ``drop_unidentified`` it is reported with a
    nan estimate and ``identified=False``.
    """
    if design.entities is None:
        raise DesignError("fixed-effects design needs entity assignments")
    ent = design.entities
    n = design.n
    Xw = demean(design.X, ent)
    yw = demean(design.y, ent)
    scale = np.maximum(np.abs(design.X).max(axis=0), 1.0)
    invariant = [j for j in range(Xw.shape[1]) if np.abs(Xw[:, j]).max() <= 1e-12 * scale[j]]
    if invariant and (not drop_unidentified or len(invariant) == Xw.shape[1]):
        raise DesignError("not identified (constant within every entity): "
                          + ", ".join(design.names[j] for j in invariant))
    cols = [j for j in range(Xw.shape[1]) if j not in invariant]
    Xk = Xw[:, cols]
    names = [design.names[j] for j in cols]
    _check_rank(Xk, names)
    k = len(cols)
    n_ent = len(np.unique(ent.astype(str)))
    beta, *_ = np.linalg.lstsq(Xk, yw, rcond=None)
    resid = yw - Xk @ beta
    clusters = design.clusters if design.clusters is not None else ent
    cov, G = cluster_covariance(Xk, resid, clusters, k=k)
    rss = float(resid @ resid)
    tss_w = float(yw @ yw)
    within = 1.0 - rss / tss_w if tss_w > 0 else math.nan
    df_resid = n - n_ent - k
    resid_se = math.sqrt(rss / df_resid) if df_resid > 0 else math.nan
    f = ((tss_w - rss) / k) / (rss / df_resid) if df_resid > 0 and rss > 0 else math.nan
    coefs = _coefficients(names, beta, cov, G, Xk, yw)
    by_name = {c.name: c for c in coefs}
    full = [by_name.get(nm, Coefficient(nm, math.nan, math.nan, math.nan, math.nan, identified=False))
            for nm in design.names]
    meta = {**design.meta, "covariance": "CR1", "p_value_df": G - 1, "cr1_k": k,
            "unidentified": [design.names[j] for j in invariant]}
    return RegressionResult(full, n, n_ent, math.nan, math.nan, within, resid_se, df_resid, f,
                            (k, df_resid), "within", meta)


# reporting -----------------------------------------------------------------

def stars(p: float) -> str:
    if p is None or math.isnan(p):
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def cell(c: Coefficient) -> str:
    if not c.identified:
        return "not identified"
    est = c.estimate if round(c.estimate, 3) != 0 else 0.0  # no "-0.000"
    return f"{est:.3f}{stars(c.p)} ({c.se:.3f})"


def results_to_csv(result: RegressionResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "estimate", "se", "t", "p", "stars"])
    for c in result.coefficients:
        vals = [c.estimate, c.se, c.t, c.p]
        w.writerow([c.name, *("" if not math.isfinite(v) else repr(v) for v in vals), stars(c.p)])
    return buf.getvalue()


def star_table(results: Sequence[RegressionResult], headers: Sequence[str] | None = None) -> str:
    """Aligned text table of coefficient (SE) cells, one column per model."""
    headers = list(headers) if headers else [f"({i + 1})" for i in range(len(results))]
    names: list[str] = []
    for r in results:
        names.extend(nm for nm in r.names if nm not in names)
    body = []
    for nm in names:
        row = [nm]
        for r in results:
            row.append(cell(r[nm]) if nm in r.names else "")
        body.append(row)
    body.append(["Observations", *(str(r.n) for r in results)])
    if any(r.kind == "within" for r in results):
        body.append(["N. of groups", *(str(r.n_groups) if r.kind == "within" else "" for r in results)])
    body.append(["R^2", *(f"{(r.within_r2 if r.kind == 'within' else r.r2):.3f}" for r in results)])
    body.append(["Adjusted R^2", *(f"{r.adj_r2:.3f}" if r.kind == "ols" else "" for r in results)])
    body.append(["Residual Std. Error", *(f"{r.resid_se:.3f} (df={r.resid_df})" for r in results)])
    body.append(["F Statistic", *(f"{r.f_stat:.3f} (df={r.f_df[0]}; {r.f_df[1]})" for r in results)])
    table = [["", *headers], *body]
    widths = [max(len(row[j]) for row in table) for j in range(len(table[0]))]
    lines = ["  ".join(cellv.ljust(widths[j]) if j == 0 else cellv.rjust(widths[j])
                       for j, cellv in enumerate(row)).rstrip() for row in table]
    lines.append("Note: *p<0.05; **p<0.01; ***p<0.001")
    return "\n".join(lines) + "\n"


def star_table_csv(results: Sequence[RegressionResult], headers: Sequence[str] | None = None) -> str:
    headers = list(headers) if headers else [f"({i + 1})" for i in range(len(results))]
    names: list[str] = []
    for r in results:
        names.extend(nm for nm in r.names if nm not in names)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["term", *headers])
    for nm in names:
        w.writerow([nm, *(cell(r[nm]) if nm in r.names else "" for r in results)])
    w.writerow(["observations", *(r.n for r in results)])
    return buf.getvalue()
