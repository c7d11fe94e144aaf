"""CART regression trees with exact greedy split search.

Trees are grown level by level. Each column is coded once by rank of its
distinct values; the rows of every open node sit in one contiguous segment,
and a node is scanned by bucketing its rows on those codes. Two split
criteria share the code path:

* variance reduction, ``gain = SSE(parent) - SSE(left) - SSE(right)``,
  evaluated as ``S_L^2/W_L + S_R^2/W_R - S^2/W``;
* second-order boosting gain,
  ``0.5 * (G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - G^2/(H+lam)) - gamma``.

Candidate thresholds are midpoints between adjacent distinct values and rows
route left when ``x <= threshold``. Ties in gain go to the lowest feature
index, then the lowest threshold. A node whose targets are all identical is
never split.

Floating-point sums follow one fixed order so gains are reproducible bit for
bit: node totals accumulate in row order, and a left child's sums are the
per-value group sums (each in row order) added in ascending value order. The
right side is the node total minus the left.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import DataError, ShapeMismatch

_NO_LIMIT = np.iinfo(np.int64).max


@dataclass(frozen=True)
class TreeParams:
    max_depth: int | None = None
    min_samples_leaf: int = 1
    min_child_weight: float = 0.0
    feature_subsample: str | float = "all"  # "all", "sqrt" or a fraction in (0, 1]
    split_gain_min: float = 0.0
    l2_leaf_reg: float = 0.0

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 0:
            raise DataError("max_depth must be >= 0 or None")
        if self.min_samples_leaf < 1:
            raise DataError("min_samples_leaf must be >= 1")
        if self.min_child_weight < 0 or self.split_gain_min < 0 or self.l2_leaf_reg < 0:
            raise DataError("min_child_weight, split_gain_min and l2_leaf_reg must be >= 0")
        fs = self.feature_subsample
        if isinstance(fs, str):
            if fs not in ("all", "sqrt"):
                raise DataError(f"feature_subsample must be 'all', 'sqrt' or a fraction, got {fs!r}")
        elif not 0 < float(fs) <= 1:
            raise DataError("feature_subsample fraction must lie in (0, 1]")

    def n_features_per_node(self, d: int) -> int:
        fs = self.feature_subsample
        if fs == "all":
            return d
        if fs == "sqrt":
            return max(1, math.ceil(math.sqrt(d)))
        return max(1, math.floor(float(fs) * d))


@dataclass(frozen=True)
class SplitCandidate:
    feature_index: int
    threshold: float
    gain: float


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Flat preorder node arrays; leaves have ``feature == -1``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    weight: np.ndarray
    n_features: int = field(default=0)

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for k in range(self.n_nodes):  # preorder: parents precede children
            if self.feature[k] >= 0:
                depth[self.left[k]] = depth[self.right[k]] = depth[k] + 1
        return int(depth.max()) if self.n_nodes else 0


# -- kernels -----------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _segment_stats(rows, start, end, w, t, h):
    L = start.shape[0]
    W = np.zeros(L)
    S = np.zeros(L)
    H = np.zeros(L)
    tmin = np.full(L, np.inf)
    tmax = np.full(L, -np.inf)
    for k in range(L):
        for p in range(start[k], end[k]):
            r = rows[p]
            W[k] += w[r]
            S[k] += w[r] * t[r]
            H[k] += w[r] * h[r]
            if t[r] < tmin[k]:
                tmin[k] = t[r]
            if t[r] > tmax[k]:
                tmax[k] = t[r]
    return W, S, H, tmin, tmax


@numba.njit(cache=True, nogil=True, inline="always")
def _gain(lW, lS, lH, W, S, H, use_hess, min_leaf, mcw, lam, gamma):
    """Split gain, or -1 when the split violates a child constraint."""
    rW = W - lW
    if lW < min_leaf or rW < min_leaf:
        return -1.0
    rS = S - lS
    if use_hess:
        rH = H - lH
        if lH < mcw or rH < mcw:
            return -1.0
        return 0.5 * (lS * lS / (lH + lam) + rS * rS / (rH + lam) - S * S / (H + lam)) - gamma
    return lS * lS / lW + rS * rS / rW - S * S / W


@numba.njit(cache=True, nogil=True)
def _scan(codes, values, offsets, rows, start, end, splittable, allowed, w, t, h, use_hess,
          W, S, H, min_leaf, mcw, lam, gamma):
    """Best (gain, feature, left code, right code) per node over its allowed features.

    Each node's rows are bucketed by the column's value code, through a
    histogram when the column has few distinct values relative to the node
    size and through a sort otherwise; both walk the distinct values present
    in the node in ascending order.
    """
    d = codes.shape[0]
    L = start.shape[0]
    best_gain = np.zeros(L)
    best_feat = np.full(L, -1, np.int64)
    best_code = np.zeros(L, np.int64)
    best_next = np.zeros(L, np.int64)
    max_bins = 0
    for f in range(d):
        max_bins = max(max_bins, offsets[f + 1] - offsets[f])
    hist = np.zeros((max_bins, 3))
    for k in range(L):
        if not splittable[k]:
            continue
        nk = end[k] - start[k]
        seg = rows[start[k]:end[k]]
        # the node's weighted sums, gathered once and reused for every feature
        sw = np.empty((nk, 3))
        for q in range(nk):
            r = seg[q]
            sw[q, 0] = w[r]
            sw[q, 1] = w[r] * t[r]
            sw[q, 2] = w[r] * h[r]
        c = np.empty(nk, np.int64)
        Wk, Sk, Hk = W[k], S[k], H[k]
        for f in range(d):
            if not allowed[k, f]:
                continue
            nb = offsets[f + 1] - offsets[f]
            if nb < 2:
                continue
            lW = 0.0
            lS = 0.0
            lH = 0.0
            prev = -1
            cf = codes[f]
            for q in range(nk):
                c[q] = cf[seg[q]]
            if nb <= 4 * nk + 16:
                hist[:nb] = 0.0
                for q in range(nk):
                    b = c[q]
                    hist[b, 0] += sw[q, 0]
                    hist[b, 1] += sw[q, 1]
                    hist[b, 2] += sw[q, 2]
                for b in range(nb):
                    if hist[b, 0] == 0.0:
                        continue
                    if prev >= 0:
                        g = _gain(lW, lS, lH, Wk, Sk, Hk, use_hess, min_leaf, mcw, lam, gamma)
                        if g > best_gain[k]:
                            best_gain[k] = g
                            best_feat[k] = f
                            best_code[k] = prev
                            best_next[k] = b
                    lW += hist[b, 0]
                    lS += hist[b, 1]
                    lH += hist[b, 2]
                    prev = b
            else:
                # per-value group sums folded in at each boundary, matching the histogram path bit for bit
                idx = np.argsort(c, kind="mergesort")
                gW = 0.0
                gS = 0.0
                gH = 0.0
                for q in range(nk):
                    i = idx[q]
                    b = c[i]
                    if prev >= 0 and b != prev:
                        lW += gW
                        lS += gS
                        lH += gH
                        gW = 0.0
                        gS = 0.0
                        gH = 0.0
                        g = _gain(lW, lS, lH, Wk, Sk, Hk, use_hess, min_leaf, mcw, lam, gamma)
                        if g > best_gain[k]:
                            best_gain[k] = g
                            best_feat[k] = f
                            best_code[k] = prev
                            best_next[k] = b
                    gW += sw[i, 0]
                    gS += sw[i, 1]
                    gH += sw[i, 2]
                    prev = b
    return best_gain, best_feat, best_code, best_next


@numba.njit(cache=True, nogil=True)
def _partition(codes, rows, start, end, feat, left_code):
    """Stable left/right partition of every split node's segment; leaves drop out."""
    L = start.shape[0]
    total = 0
    for k in range(L):
        if feat[k] >= 0:
            total += end[k] - start[k]
    out = np.empty(total, np.int64)
    n_split = 0
    for k in range(L):
        if feat[k] >= 0:
            n_split += 1
    cstart = np.empty(2 * n_split, np.int64)
    cend = np.empty(2 * n_split, np.int64)
    q = 0
    c = 0
    for k in range(L):
        f = feat[k]
        if f < 0:
            continue
        cstart[c] = q
        for p in range(start[k], end[k]):
            r = rows[p]
            if codes[f, r] <= left_code[k]:
                out[q] = r
                q += 1
        cend[c] = q
        cstart[c + 1] = q
        for p in range(start[k], end[k]):
            r = rows[p]
            if codes[f, r] > left_code[k]:
                out[q] = r
                q += 1
        cend[c + 1] = q
        c += 2
    return out, cstart, cend


@numba.njit(cache=True, nogil=True)
def _predict(X, feature, threshold, left, right, value):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        k = 0
        while feature[k] >= 0:
            if X[i, feature[k]] <= threshold[k]:
                k = left[k]
            else:
                k = right[k]
        out[i] = value[k]
    return out


# -- driver ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Presorted:
    """Per-column value codes: ``values[offsets[f] + codes[f, r]] == X[r, f]``.

    Computed once per feature matrix and shared by every tree fitted on it.
    """

    codes: np.ndarray  # (d, n) int64
    values: np.ndarray  # distinct values of each column, ascending, concatenated
    offsets: np.ndarray  # (d + 1,)

    @property
    def shape(self) -> tuple[int, int]:
        return self.codes.shape[1], self.codes.shape[0]


def presort(X) -> Presorted:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ShapeMismatch(f"X must be 2-D, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise DataError("X must be finite")
    n, d = X.shape
    codes = np.empty((d, n), dtype=np.int64)
    values, offsets = [], [0]
    for f in range(d):
        uniq, inv = np.unique(X[:, f], return_inverse=True)
        codes[f] = inv.ravel()
        values.append(uniq)
        offsets.append(offsets[-1] + uniq.size)
    vals = np.concatenate(values) if values else np.zeros(0)
    return Presorted(codes, vals, np.asarray(offsets, dtype=np.int64))


def _prepare(X, targets, hessians, sample_weight, presorted):
    pre = presort(X) if presorted is None else presorted
    n, _ = pre.shape
    t = np.ascontiguousarray(targets, dtype=float).ravel()
    if t.shape[0] != n:
        raise ShapeMismatch(f"X has {n} rows, targets has {t.shape[0]}")
    if hessians is None:
        h = np.ones(n)
    else:
        h = np.ascontiguousarray(hessians, dtype=float).ravel()
        if h.shape[0] != n:
            raise ShapeMismatch(f"X has {n} rows, hessians has {h.shape[0]}")
        if not (h > 0).all():
            raise DataError("hessians must be strictly positive")
    w = np.ones(n) if sample_weight is None else np.ascontiguousarray(sample_weight, dtype=float).ravel()
    if w.shape[0] != n:
        raise ShapeMismatch(f"X has {n} rows, sample_weight has {w.shape[0]}")
    if (w < 0).any():
        raise DataError("sample weights must be non-negative")
    rows = np.flatnonzero(w > 0).astype(np.int64)
    return pre, rows, t, h, w


def _draw_allowed(rng, n_nodes: int, d: int, k: int) -> np.ndarray:
    if k >= d:
        return np.ones((n_nodes, d), dtype=np.bool_)
    if rng is None:
        raise DataError("feature subsampling needs a random generator")
    keys = rng.random((n_nodes, d))
    chosen = np.argsort(keys, axis=1, kind="stable")[:, :k]
    allowed = np.zeros((n_nodes, d), dtype=np.bool_)
    np.put_along_axis(allowed, chosen, True, axis=1)
    return allowed


def _as_rng(rng):
    if rng is None or isinstance(rng, np.random.Generator):
        return rng
    from ._rng import generator

    return generator(int(rng))


def _grow(pre: Presorted, rows, t, h, w, use_hess, params: TreeParams, rng):
    n, d = pre.shape
    m = rows.shape[0]
    max_depth = _NO_LIMIT if params.max_depth is None else params.max_depth
    k_feat = params.n_features_per_node(d) if d else 0
    lam = params.l2_leaf_reg if use_hess else 0.0
    mcw = params.min_child_weight if use_hess else 0.0

    cap = 2 * max(m, 1) + 1  # a binary tree over m weighted rows has < 2m nodes
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    gain_arr = np.zeros(cap)
    W_arr, S_arr, H_arr = np.zeros(cap), np.zeros(cap), np.zeros(cap)
    pure = np.zeros(cap, dtype=np.bool_)
    tmin_arr = np.zeros(cap)

    level = np.zeros(1, dtype=np.int64)
    start = np.zeros(1, dtype=np.int64)
    end = np.full(1, m, dtype=np.int64)
    n_nodes = 1
    depth = 0
    while level.size:
        L = level.size
        W, S, H, tmin, tmax = _segment_stats(rows, start, end, w, t, h)
        W_arr[level], S_arr[level], H_arr[level] = W, S, H
        tmin_arr[level] = tmin
        pure[level] = tmin == tmax
        if depth >= max_depth or d == 0:
            break
        splittable = (W >= 2 * params.min_samples_leaf) & (tmin < tmax)
        if use_hess:
            splittable &= H >= 2 * mcw
        if not splittable.any():
            break
        allowed = np.ones((L, d), dtype=np.bool_)
        idx = np.flatnonzero(splittable)
        allowed[idx] = _draw_allowed(rng, idx.size, d, k_feat)
        gain, feat, code, nxt = _scan(
            pre.codes, pre.values, pre.offsets, rows, start, end, splittable, allowed, w, t, h, use_hess,
            W, S, H, float(params.min_samples_leaf), float(mcw), float(lam), float(params.split_gain_min),
        )
        split = feat >= 0
        n_split = int(split.sum())
        if not n_split:
            break
        parents = level[split]
        f_split = feat[split]
        lo = pre.values[pre.offsets[f_split] + code[split]]
        hi = pre.values[pre.offsets[f_split] + nxt[split]]
        thr = 0.5 * (lo + hi)
        thr = np.where(thr >= hi, lo, thr)  # midpoint can round up to hi for adjacent floats
        children = n_nodes + np.arange(2 * n_split, dtype=np.int64)
        feature[parents] = f_split
        threshold[parents] = thr
        gain_arr[parents] = gain[split]
        left[parents] = children[0::2]
        n_nodes += 2 * n_split
        rows, start, end = _partition(pre.codes, rows, start, end, np.where(split, feat, -1), code)
        level = children
        depth += 1

    sl = slice(0, n_nodes)
    feature, threshold, left = feature[sl], threshold[sl], left[sl]
    right = np.where(feature >= 0, left + 1, -1)
    Wa, Sa, Ha = W_arr[sl], S_arr[sl], H_arr[sl]
    if use_hess:
        value = Sa / (Ha + lam)
    else:
        value = Sa / np.where(Wa > 0, Wa, 1.0)
        value = np.where(pure[sl], tmin_arr[sl], value)
    value = np.where(feature < 0, value, 0.0)
    return _to_preorder(feature, threshold, left, right, value, gain_arr[sl], Wa, d)


def _to_preorder(feature, threshold, left, right, value, gain, weight, d) -> RegressionTree:
    n_nodes = feature.shape[0]
    order = []
    stack = [0]
    while stack:
        k = stack.pop()
        order.append(k)
        if feature[k] >= 0:
            stack.append(right[k])
            stack.append(left[k])
    order = np.asarray(order, dtype=np.int64)
    new_id = np.empty(n_nodes, dtype=np.int64)
    new_id[order] = np.arange(n_nodes)
    f = feature[order]
    remap = lambda a: np.where(f >= 0, new_id[np.maximum(a[order], 0)], -1)
    return RegressionTree(
        feature=f,
        threshold=threshold[order],
        left=remap(left),
        right=remap(right),
        value=value[order],
        gain=gain[order],
        weight=weight[order],
        n_features=d,
    )


def find_best_split(X, targets, hessians=None, params: TreeParams = TreeParams(), rng=None, sample_weight=None):
    """Best root split of ``(X, targets)``, or ``None`` when nothing has positive gain."""
    pre, rows, t, h, w = _prepare(X, targets, hessians, sample_weight, None)
    if pre.shape[0] < 2:
        raise DataError("find_best_split needs at least 2 rows")
    p = TreeParams(
        max_depth=1,
        min_samples_leaf=params.min_samples_leaf,
        min_child_weight=params.min_child_weight,
        feature_subsample=params.feature_subsample,
        split_gain_min=params.split_gain_min,
        l2_leaf_reg=params.l2_leaf_reg,
    )
    tree = _grow(pre, rows, t, h, w, hessians is not None, p, _as_rng(rng))
    if tree.feature[0] < 0:
        return None
    return SplitCandidate(int(tree.feature[0]), float(tree.threshold[0]), float(tree.gain[0]))


def fit_regression_tree(
    X,
    targets,
    hessians=None,
    params: TreeParams = TreeParams(),
    rng=None,
    sample_weight=None,
    presorted=None,
) -> RegressionTree:
    """Grow a tree greedily.

    Without ``hessians`` leaves hold the (weighted) target mean, returned
    exactly when the leaf is pure. With ``hessians`` the targets are taken as
    negative gradients and a leaf holds ``sum(targets) / (sum(h) + lam)``,
    i.e. ``-G / (H + lam)``. ``sample_weight`` holds non-negative integer
    multiplicities (bootstrap counts, subsample masks). ``presorted`` is the
    output of :func:`presort` for ``X`` and skips the per-fit coding.
    """
    pre, rows, t, h, w = _prepare(X, targets, hessians, sample_weight, presorted)
    if pre.shape[0] < 1:
        raise DataError("cannot fit a tree on zero rows")
    if not rows.size:
        raise DataError("all sample weights are zero")
    return _grow(pre, rows, t, h, w, hessians is not None, params, _as_rng(rng))


def predict_tree(tree: RegressionTree, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2 or (tree.n_features and X.shape[1] != tree.n_features):
        raise ShapeMismatch(f"tree expects {tree.n_features} columns, got shape {X.shape}")
    return _predict(X, tree.feature, tree.threshold, tree.left, tree.right, tree.value)
