"""Binary decision trees on sparse, mostly-zero feature matrices.

Split search works on the nonzero entries of a CSC matrix, presorted once by
(column, value). Absent entries are value 0; for every column present in a
node a virtual zero entry carries the weight of the node's rows that lack the
column. Both Gini impurity (binary targets) and squared error reduce to
maximizing  S_L^2 / W_L + S_R^2 / W_R  where W is the summed sample weight and
S the summed weight * target, so one search serves classification and
regression trees.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

LEAF = -1


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def to_dict(self) -> dict:
        return {
            "feature": [int(x) for x in self.feature],
            "threshold": [float(x) for x in self.threshold],
            "left": [int(x) for x in self.left],
            "right": [int(x) for x in self.right],
            "value": [float(x) for x in self.value],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(np.array(d["feature"], dtype=np.int64),
                   np.array(d["threshold"], dtype=float),
                   np.array(d["left"], dtype=np.int64),
                   np.array(d["right"], dtype=np.int64),
                   np.array(d["value"], dtype=float))

    @classmethod
    def constant(cls, value: float) -> "Tree":
        return cls(np.array([LEAF]), np.array([0.0]), np.array([LEAF]),
                   np.array([LEAF]), np.array([float(value)]))


class SortedEntries:
    """Nonzero entries of a feature matrix ordered by (column, value)."""

    def __init__(self, X):
        X = sp.csc_matrix(X, dtype=float, copy=True)
        X.eliminate_zeros()
        col = np.repeat(np.arange(X.shape[1]), np.diff(X.indptr))
        order = np.lexsort((X.data, col))
        self.row = X.indices[order].astype(np.int64)
        self.col = col[order]
        self.val = X.data[order]
        self.n_rows, self.n_features = X.shape


def _best_split(entries: SortedEntries, e: np.ndarray, w: np.ndarray, s: np.ndarray,
                W: float, S: float, max_features: int | None, rng):
    """Return (gain, feature, threshold) of the best split or None."""
    if len(e) == 0:
        return None
    ecol = entries.col[e]
    evals = entries.val[e]
    erow = entries.row[e]
    ew = w[erow]
    es = s[erow]
    n = len(e)
    flag = np.empty(n, dtype=bool)
    flag[0] = True
    flag[1:] = ecol[1:] != ecol[:-1]
    seg_start = np.flatnonzero(flag)
    nseg = len(seg_start)
    seg_id = np.cumsum(flag) - 1
    seg_w = np.add.reduceat(ew, seg_start)
    seg_s = np.add.reduceat(es, seg_start)
    neg = np.add.reduceat((evals < 0).astype(np.int64), seg_start)

    # merge in one virtual zero entry per column, placed between negatives and positives
    m = n + nseg
    pos_real = np.arange(n) + seg_id + (evals > 0)
    pos_virt = seg_start + np.arange(nseg) + neg
    mcol = np.empty(m, dtype=np.int64)
    mval = np.empty(m)
    mw = np.empty(m)
    ms = np.empty(m)
    mcol[pos_real], mval[pos_real], mw[pos_real], ms[pos_real] = ecol, evals, ew, es
    mcol[pos_virt] = ecol[seg_start]
    mval[pos_virt] = 0.0
    mw[pos_virt] = W - seg_w
    ms[pos_virt] = S - seg_s

    mstart = seg_start + np.arange(nseg)
    lengths = np.diff(np.append(mstart, m))
    cw = np.cumsum(mw)
    cs = np.cumsum(ms)
    wl = cw - np.repeat(cw[mstart] - mw[mstart], lengths)
    sl = cs - np.repeat(cs[mstart] - ms[mstart], lengths)

    cand = np.zeros(m, dtype=bool)
    cand[:-1] = (mcol[:-1] == mcol[1:]) & (mval[:-1] < mval[1:])
    wr = W - wl
    cand &= (wl > 0) & (wr > 0)
    if not cand.any():
        return None
    if max_features is not None:
        nonconst = np.zeros(entries.n_features, dtype=bool)
        nonconst[mcol[cand]] = True
        perm = rng.permutation(entries.n_features)
        chosen = perm[nonconst[perm]][:max_features]
        allowed = np.zeros(entries.n_features, dtype=bool)
        allowed[chosen] = True
        cand &= allowed[mcol]
    idx = np.flatnonzero(cand)
    wl_c, sl_c = wl[idx], sl[idx]
    score = sl_c * sl_c / wl_c + (S - sl_c) ** 2 / (W - wl_c)
    best = int(np.argmax(score))
    gain = score[best] - S * S / W
    j = idx[best]
    lo, hi = mval[j], mval[j + 1]
    thr = (lo + hi) / 2.0
    if thr >= hi:
        thr = lo
    return gain, int(mcol[j]), float(thr)


def build_tree(entries: SortedEntries, weight: np.ndarray, target: np.ndarray,
               max_depth: int | None = None, max_features: int | None = None,
               rng=None, leaf_value: Callable[[np.ndarray], float] | None = None,
               ) -> tuple[Tree, np.ndarray]:
    """Grow one tree depth-first.

    ``weight`` is a per-row sample weight (0 excludes the row). Returns the
    tree and, for every row, the index of the leaf it landed in (-1 if the
    row had zero weight).
    """
    weight = np.asarray(weight, dtype=float)
    target = np.asarray(target, dtype=float)
    s = weight * target
    if leaf_value is None:
        def leaf_value(rows):
            return float(s[rows].sum() / weight[rows].sum())

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []
    row_leaf = np.full(entries.n_rows, LEAF, dtype=np.int64)
    goes_left = np.zeros(entries.n_rows, dtype=bool)

    rows0 = np.flatnonzero(weight > 0)
    e0 = np.flatnonzero(weight[entries.row] > 0)
    stack = [(rows0, e0, 0, -1, False)]
    while stack:
        rows, e, depth, parent, is_left = stack.pop()
        node = len(feature)
        if parent >= 0:
            (left if is_left else right)[parent] = node
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(0.0)

        W = float(weight[rows].sum())
        S = float(s[rows].sum())
        split = None
        if (max_depth is None or depth < max_depth) and len(rows) > 1 and len(e) > 0 \
                and np.ptp(target[rows]) > 0:
            split = _best_split(entries, e, weight, s, W, S, max_features, rng)
            if split is not None and not split[0] > 1e-12 * W:
                split = None
        if split is None:
            value[node] = leaf_value(rows)
            row_leaf[rows] = node
            continue

        _, f, thr = split
        feature[node] = f
        threshold[node] = thr
        value[node] = S / W
        goes_left[rows] = 0.0 <= thr
        fe = e[entries.col[e] == f]
        goes_left[entries.row[fe]] = entries.val[fe] <= thr
        lmask = goes_left[rows]
        emask = goes_left[entries.row[e]]
        # right pushed first so the left subtree is numbered next (preorder)
        stack.append((rows[~lmask], e[~emask], depth + 1, node, False))
        stack.append((rows[lmask], e[emask], depth + 1, node, True))

    tree = Tree(np.array(feature, dtype=np.int64), np.array(threshold),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(value))
    return tree, row_leaf


def predict_trees(trees: Sequence[Tree], X, chunk_cells: int = 4_000_000) -> np.ndarray:
    """Leaf values of every tree for every row; shape (n_rows, n_trees)."""
    X = sp.csr_matrix(X)
    n, d = X.shape
    if not trees:
        return np.zeros((n, 0))
    sizes = np.array([t.node_count for t in trees])
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    feat = np.concatenate([t.feature for t in trees])
    thr = np.concatenate([t.threshold for t in trees])
    val = np.concatenate([t.value for t in trees])
    lft = np.concatenate([np.where(t.left >= 0, t.left + o, LEAF) for t, o in zip(trees, offsets)])
    rgt = np.concatenate([np.where(t.right >= 0, t.right + o, LEAF) for t, o in zip(trees, offsets)])
    if feat.max() >= d:
        raise ValueError(f"trees use feature {feat.max()} but input has {d} columns")

    out = np.empty((n, len(trees)))
    step = max(1, chunk_cells // max(d, 1))
    for start in range(0, n, step):
        dense = X[start:start + step].toarray()
        rows = np.arange(dense.shape[0])[:, None]
        node = np.broadcast_to(offsets, (dense.shape[0], len(trees))).copy()
        while True:
            f = feat[node]
            active = f >= 0
            if not active.any():
                break
            x = dense[np.broadcast_to(rows, node.shape), np.where(active, f, 0)]
            nxt = np.where(x <= thr[node], lft[node], rgt[node])
            node = np.where(active, nxt, node)
        out[start:start + dense.shape[0]] = val[node]
    return out
