"""Subsampled regression and causal forests.

Trees are grown by exhaustive search over ``mtry`` random candidate features.
A split sends ``x <= threshold`` left, where the threshold is the largest
left-hand feature value actually observed, so routing depends only on the
rank order of each feature.  Candidate features are visited in increasing
index order and positions left to right; only a strictly better gain
replaces the incumbent, so ties resolve to the lowest feature and then the
lowest threshold.

With ``honest=True`` each tree's subsample is halved: one half places the
splits, the other fills the leaves.  Leaves that receive no honest samples
take their parent's value.

The causal variant (``treatment_residual`` given) splits on gradient-style
pseudo-effects and stores ``sum(W~ Y~) / sum(W~^2)`` in each leaf, which is
the weighted mean of ``Y~ / W~`` with weights ``W~^2``.  Split
stabilization additionally requires treated and control units on both sides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..seeding import derive_seed


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 2000
    max_depth: int | None = None
    min_leaf: int = 5
    mtry: int | None = None
    honest: bool = True
    bootstrap_fraction: float = 0.5
    stabilize_splits: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if not 0.0 < self.bootstrap_fraction <= 1.0:
            raise ValueError("bootstrap_fraction must lie in (0, 1]")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")

    def resolve_mtry(self, d: int) -> int:
        if self.mtry is None:
            return min(math.ceil(math.sqrt(d) + 20), d)
        if self.mtry > d:
            raise ValueError(f"mtry={self.mtry} exceeds the {d} available features")
        return self.mtry


@dataclass(frozen=True)
class ForestModel:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray
    n_features: int
    y_range: tuple[float, float]
    flags: dict = field(default_factory=dict)

    @property
    def n_trees(self) -> int:
        return self.roots.size


@njit(cache=True)
def _grow_tree(X, target, weight, wres, treat, split_rows, honest_rows, leaf_y, leaf_w,
               mtry, min_leaf, max_depth, causal, stabilize, np_seed):
    n_rows = split_rows.size
    d = X.shape[1]
    cap = 2 * n_rows + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    parent = np.full(cap, -1, np.int64)

    idx = split_rows.copy()
    scratch = np.empty(n_rows, np.int64)
    t_loc = np.empty(n_rows)
    w_loc = np.empty(n_rows)
    xs = np.empty(n_rows)
    feats = np.arange(d)
    cand = np.empty(mtry, np.int64)

    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    top = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n_rows
    st_depth[0] = 0
    top = 1
    n_nodes = 1
    np.random.seed(np_seed)

    while top > 0:
        top -= 1
        node = st_node[top]
        start = st_start[top]
        end = st_end[top]
        depth = st_depth[top]
        m = end - start
        if m < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue
        n_treat = 0
        if stabilize:
            for k in range(m):
                n_treat += treat[idx[start + k]]
            if n_treat < 2 * min_leaf or m - n_treat < 2 * min_leaf:
                continue

        if causal:
            ebar = 0.0
            ybar = 0.0
            for k in range(m):
                r = idx[start + k]
                ebar += wres[r]
                ybar += target[r]
            ebar /= m
            ybar /= m
            sww = 0.0
            swy = 0.0
            for k in range(m):
                r = idx[start + k]
                dw = wres[r] - ebar
                sww += dw * dw
                swy += dw * (target[r] - ybar)
            if sww <= 1e-300:
                continue
            tau_p = swy / sww
            var_w = sww / m
            for k in range(m):
                r = idx[start + k]
                dw = wres[r] - ebar
                t_loc[k] = dw * ((target[r] - ybar) - dw * tau_p) / var_w
                w_loc[k] = 1.0
        else:
            for k in range(m):
                r = idx[start + k]
                t_loc[k] = target[r]
                w_loc[k] = weight[r]

        s_tot = 0.0
        w_tot = 0.0
        ss_tot = 0.0
        for k in range(m):
            s_tot += w_loc[k] * t_loc[k]
            w_tot += w_loc[k]
            ss_tot += w_loc[k] * t_loc[k] * t_loc[k]
        if w_tot <= 0.0:
            continue
        base = s_tot * s_tot / w_tot
        min_gain = 1e-10 * ss_tot

        # partial Fisher-Yates draw of the candidate features
        for k in range(mtry):
            j = k + np.random.randint(0, d - k)
            tmp = feats[k]
            feats[k] = feats[j]
            feats[j] = tmp
        for k in range(mtry):
            cand[k] = feats[k]
        cand.sort()

        best_gain = min_gain
        best_f = -1
        best_thr = 0.0
        for c in range(mtry):
            f = cand[c]
            for k in range(m):
                xs[k] = X[idx[start + k], f]
            order = np.argsort(xs[:m], kind="mergesort")
            sl = 0.0
            wl = 0.0
            tl = 0
            for i in range(m - 1):
                o = order[i]
                sl += w_loc[o] * t_loc[o]
                wl += w_loc[o]
                if stabilize:
                    tl += treat[idx[start + o]]
                if i + 1 < min_leaf:
                    continue
                if m - (i + 1) < min_leaf:
                    break
                if xs[order[i]] == xs[order[i + 1]]:
                    continue
                if stabilize:
                    if (tl < min_leaf or i + 1 - tl < min_leaf
                            or n_treat - tl < min_leaf or m - (i + 1) - (n_treat - tl) < min_leaf):
                        continue
                wr = w_tot - wl
                if wl <= 0.0 or wr <= 0.0:
                    continue
                sr = s_tot - sl
                gain = sl * sl / wl + sr * sr / wr - base
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_thr = xs[order[i]]
        if best_f < 0:
            continue

        # stable partition of idx[start:end]
        nl = 0
        for k in range(m):
            r = idx[start + k]
            if X[r, best_f] <= best_thr:
                scratch[nl] = r
                nl += 1
        nr = nl
        for k in range(m):
            r = idx[start + k]
            if X[r, best_f] > best_thr:
                scratch[nr] = r
                nr += 1
        for k in range(m):
            idx[start + k] = scratch[k]

        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = lc
        right[node] = rc
        parent[lc] = node
        parent[rc] = node
        # right child pushed first so the left subtree is expanded first
        st_node[top] = rc
        st_start[top] = start + nl
        st_end[top] = end
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = lc
        st_start[top] = start
        st_end[top] = start + nl
        st_depth[top] = depth + 1
        top += 1

    # leaf values from the honest rows; every node on the path accumulates
    sw = np.zeros(n_nodes)
    swy = np.zeros(n_nodes)
    for k in range(honest_rows.size):
        r = honest_rows[k]
        node = 0
        while True:
            sw[node] += leaf_w[r]
            swy[node] += leaf_w[r] * leaf_y[r]
            if feature[node] < 0:
                break
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
    value = np.zeros(n_nodes)
    n_fallback = 0
    for node in range(n_nodes):
        if sw[node] > 0.0:
            value[node] = swy[node] / sw[node]
        else:
            value[node] = value[parent[node]] if parent[node] >= 0 else 0.0
            if feature[node] < 0:
                n_fallback += 1
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value, n_fallback)


@njit(cache=True)
def _predict(X, feature, threshold, left, right, value, roots):
    n = X.shape[0]
    out = np.zeros(n)
    n_trees = roots.size
    for i in range(n):
        acc = 0.0
        for t in range(n_trees):
            base = roots[t]
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            acc += value[base + node]
        out[i] = acc / n_trees
    return out


def _as_matrix(X) -> np.ndarray:
    x = X.values if hasattr(X, "values") and not isinstance(X, np.ndarray) else X
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


def fit_forest(X, y, w=None, params: ForestParams = ForestParams(), *,
               treatment_residual=None, treatment=None) -> ForestModel:
    """Fit a regression forest, or a causal forest when ``treatment_residual`` is given.

    Args:
        X: ``(n, d)`` features.
        y: targets; for the causal forest, the outcome residuals ``Y - m(X)``.
        w: optional non-negative sample weights (regression only).
        params: forest hyperparameters; ``params.seed`` fixes everything.
        treatment_residual: ``W - e(X)``, switches on the causal splitting rule.
        treatment: raw 0/1 assignment; with ``params.stabilize_splits`` each
            causal child must keep ``min_leaf`` treated and ``min_leaf`` control
            units from the splitting half.
    """
    x = _as_matrix(X)
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64))
    n, d = x.shape
    if y.shape != (n,):
        raise ValueError(f"y has shape {y.shape}, expected ({n},)")
    if w is None:
        w = np.ones(n)
    w = np.ascontiguousarray(np.asarray(w, dtype=np.float64))
    if w.shape != (n,) or np.any(w < 0):
        raise ValueError("sample weights must be a non-negative length-n vector")
    causal = treatment_residual is not None
    if causal:
        wres = np.ascontiguousarray(np.asarray(treatment_residual, dtype=np.float64))
        if np.any(wres == 0):
            raise ValueError("treatment residuals must be non-zero")
        leaf_y = y / wres
        leaf_w = wres * wres
    else:
        wres = np.zeros(n)
        leaf_y, leaf_w = y, w
    stabilize = causal and params.stabilize_splits and treatment is not None
    if stabilize:
        treat = np.ascontiguousarray(np.asarray(treatment, dtype=np.int64))
        if treat.shape != (n,) or np.any((treat != 0) & (treat != 1)):
            raise ValueError("treatment must be a 0/1 vector of length n")
    else:
        treat = np.zeros(n, np.int64)
    mtry = params.resolve_mtry(d)
    max_depth = -1 if params.max_depth is None else int(params.max_depth)
    flags = {"constant_model": n < 2 * params.min_leaf, "fallback_leaves": 0}

    parts = []
    for t in range(params.n_trees):
        tree_seed = derive_seed(params.seed, [t])
        rng = np.random.default_rng(tree_seed)
        size = max(1, int(params.bootstrap_fraction * n))
        rows = np.sort(rng.permutation(n)[:size]) if size < n else np.arange(n)
        if params.honest and rows.size >= 2:
            shuffled = rng.permutation(rows)
            half = rows.size // 2
            split_rows = np.sort(shuffled[:half])
            honest_rows = np.sort(shuffled[half:])
        else:
            split_rows = honest_rows = rows
        tree = _grow_tree(x, y, w, wres, treat, split_rows.astype(np.int64), honest_rows.astype(np.int64),
                          leaf_y, leaf_w, mtry, params.min_leaf, max_depth, causal,
                          stabilize, tree_seed & 0xFFFFFFFF)
        flags["fallback_leaves"] += int(tree[5])
        parts.append(tree[:5])
    sizes = np.array([p[0].size for p in parts])
    roots = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    cat = [np.concatenate([p[k] for p in parts]) for k in range(5)]
    return ForestModel(
        feature=cat[0], threshold=cat[1], left=cat[2], right=cat[3], value=cat[4], roots=roots,
        n_features=d, y_range=(float(leaf_y.min()), float(leaf_y.max())), flags=flags,
    )


def predict_forest(model: ForestModel, X_new) -> np.ndarray:
    x = _as_matrix(X_new)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got shape {x.shape}")
    return _predict(x, model.feature, model.threshold, model.left, model.right, model.value, model.roots)
