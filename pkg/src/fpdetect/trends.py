"""Monthly shares of documents predicted as polished, by group.

Rolling means are trailing: the value for month m averages the defined
proportions of months m-window+1 .. m with equal weight.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import date
from typing import Callable, Sequence

from .corpus import (CHATGPT_LAUNCH, CLEAN_PERIOD_END, AccessPolicy, Document, access_status,
                     default_policy, rule_countries)

CHINA = frozenset({"CN", "HK", "MO"})

YearMonth = tuple[int, int]


def year_month(d: date) -> YearMonth:
    return (d.year, d.month)


def ym_str(ym: YearMonth) -> str:
    return f"{ym[0]:04d}-{ym[1]:02d}"


def month_range(lo: YearMonth, hi: YearMonth) -> list[YearMonth]:
    out = []
    y, m = lo
    while (y, m) <= hi:
        out.append((y, m))
        y, m = (y + 1, 1) if m == 12 else (y, m + 1)
    return out


@dataclass
class TrendRow:
    year_month: YearMonth
    n: int
    k: int
    rolling: float = math.nan

    @property
    def proportion(self) -> float:
        return self.k / self.n if self.n else math.nan


@dataclass
class TrendSeries:
    group: str
    rows: list[TrendRow]
    meta: dict = field(default_factory=dict)

    def proportions(self) -> list[float]:
        return [r.proportion for r in self.rows]


# built-in group functions --------------------------------------------------

def access_group(policy: AccessPolicy | None = None, rule: str = "all_authors") -> Callable[[Document], str]:
    policy = policy or default_policy()

    def fn(doc: Document) -> str:
        return "no_access" if access_status(policy, doc, rule=rule) else "access"
    return fn


def china_group(policy: AccessPolicy | None = None, rule: str = "all_authors") -> Callable[[Document], str]:
    """Three-way split of the no-access group into China and the rest."""
    policy = policy or default_policy()

    def fn(doc: Document) -> str:
        if not access_status(policy, doc, rule=rule):
            return "access"
        return "china" if set(rule_countries(doc, rule)) <= CHINA else "other_no_access"
    return fn


def subject_group(doc: Document) -> str:
    return doc.subfields[0] if doc.subfields else "unknown"


def all_group(doc: Document) -> str:
    return "all"


GROUPINGS = {"all": lambda **kw: all_group, "access": access_group, "china": china_group,
             "subject": lambda **kw: subject_group}


def monthly_series(docs: Sequence[Document], predicted: Sequence[int],
                   group_fn: Callable[[Document], str] = all_group) -> dict[str, TrendSeries]:
    """Per group, document and predicted-1 counts for every month in the covered range.

    All groups share the month axis spanning the earliest to the latest
    posting month, so empty months appear with ``n == 0``.
    """
    if len(docs) != len(predicted):
        raise ValueError("every document needs a prediction")
    if not docs:
        return {}
    counts: dict[str, dict[YearMonth, list[int]]] = {}
    for doc, p in zip(docs, predicted):
        cell = counts.setdefault(group_fn(doc), {}).setdefault(year_month(doc.posted_date), [0, 0])
        cell[0] += 1
        cell[1] += int(p == 1)
    months = month_range(min(year_month(d.posted_date) for d in docs),
                         max(year_month(d.posted_date) for d in docs))
    out = {}
    for g in sorted(counts):
        rows = [TrendRow(ym, *counts[g].get(ym, (0, 0))) for ym in months]
        out[g] = TrendSeries(g, rows)
    return out


def rolling_mean(series: TrendSeries, window: int = 4) -> TrendSeries:
    if window < 1:
        raise ValueError("window must be >= 1")
    props = series.proportions()
    rows = []
    for i, r in enumerate(series.rows):
        vals = [p for p in props[max(0, i - window + 1):i + 1] if not math.isnan(p)]
        rows.append(TrendRow(r.year_month, r.n, r.k, math.fsum(vals) / len(vals) if vals else math.nan))
    meta = {**series.meta, "rolling_window": window, "rolling": "trailing, equal month weights"}
    return TrendSeries(series.group, rows, meta)


def _num(x: float) -> str:
    return "" if math.isnan(x) else repr(x)


def series_to_csv(series: dict[str, TrendSeries]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "year_month", "n", "k", "proportion", "rolling"])
    for g in sorted(series):
        for r in series[g].rows:
            w.writerow([g, ym_str(r.year_month), r.n, r.k, _num(r.proportion), _num(r.rolling)])
    return buf.getvalue()


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"]


def series_to_svg(series: dict[str, TrendSeries], title: str = "", width: int = 720,
                  height: int = 360, use_rolling: bool = True) -> str:
    """Static line chart, one line per group, with vertical rules at the period boundaries."""
    left, right, top, bottom = 56, 150, 30, 40
    pw, ph = width - left - right, height - top - bottom
    months = sorted({r.year_month for s in series.values() for r in s.rows})
    if not months:
        raise ValueError("no data to plot")
    idx = {ym: i for i, ym in enumerate(months)}
    vals = [(r.rolling if use_rolling else r.proportion) for s in series.values() for r in s.rows]
    vals = [v for v in vals if not math.isnan(v)]
    ymax = max(vals) if vals else 1.0
    ymax = 1.0 if ymax <= 0 else min(1.0, math.ceil(ymax * 10 + 1e-9) / 10)
    span = max(1, len(months) - 1)

    def x_of(pos: float) -> float:
        return left + pw * pos / span

    def y_of(v: float) -> float:
        return top + ph * (1.0 - v / ymax)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{left}" y="18" font-family="sans-serif" font-size="13">{_esc(title)}</text>')
    out.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>')
    for j in range(5):
        v = ymax * j / 4
        out.append(f'<text x="{left - 6}" y="{y_of(v) + 4:.2f}" font-family="sans-serif" '
                   f'font-size="10" text-anchor="end">{v:.2f}</text>')
    for ym in months:
        if ym[1] == 1 or ym == months[0]:
            out.append(f'<text x="{x_of(idx[ym]):.2f}" y="{top + ph + 16}" font-family="sans-serif" '
                       f'font-size="10" text-anchor="middle">{ym_str(ym)}</text>')
    for boundary in (CHATGPT_LAUNCH, CLEAN_PERIOD_END):
        ym = year_month(boundary)
        if months[0] <= ym <= months[-1]:
            # place the rule inside the month by day fraction
            pos = idx[ym] + (boundary.day - 1) / 31.0
            out.append(f'<line class="period-boundary" data-date="{boundary.isoformat()}" '
                       f'x1="{x_of(pos):.2f}" y1="{top}" x2="{x_of(pos):.2f}" y2="{top + ph}" '
                       f'stroke="gray" stroke-dasharray="4,3"/>')
    for n, g in enumerate(sorted(series)):
        color = _COLORS[n % len(_COLORS)]
        segs, cur = [], []
        for r in series[g].rows:
            v = r.rolling if use_rolling else r.proportion
            if math.isnan(v):
                if cur:
                    segs.append(cur)
                cur = []
            else:
                cur.append(f"{x_of(idx[r.year_month]):.2f},{y_of(v):.2f}")
        if cur:
            segs.append(cur)
        for seg in segs:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(seg)}"/>')
        ly = top + 14 * n + 8
        out.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 34}" y="{ly + 4}" font-family="sans-serif" '
                   f'font-size="10">{_esc(g)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
