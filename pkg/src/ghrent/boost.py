"""Gradient-boosted regression trees.

Two modes share one booster:

``xgb``
    second-order split gain with L2 leaf penalty, split-gain threshold,
    minimum child hessian and row subsampling.
``cat``
    the same booster, after replacing raw categorical code columns with
    ordered target statistics averaged over several seeded permutations.
    At prediction time each category maps to its full-history statistic;
    unseen categories map to the prior.

Every tree is added with weight equal to the learning rate. Training stops
early when an iteration yields no split with positive gain.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._rng import generator
from .errors import BadCategoricalSpec, DataError, InvalidPermutation, ShapeMismatch
from .tree import RegressionTree, TreeParams, _grow, _prepare, predict_tree, presort

MODES = ("xgb", "cat")

# seed-stream tags, kept distinct so subsampling and permutations never share a stream
_SUBSAMPLE, _PERMUTE = 1, 2


@dataclass(frozen=True)
class BoostParams:
    mode: str = "xgb"
    iterations: int = 100
    learning_rate: float = 0.3
    l2_leaf_reg: float = 1.0
    depth: int = 6
    gamma: float = 0.0
    min_child_weight: float = 0.0
    subsample: float = 1.0
    cat_prior_weight: float = 1.0
    cat_permutations: int = 4
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}")
        if self.iterations < 1:
            problems.append("iterations must be >= 1")
        if not 0 < self.learning_rate <= 1:
            problems.append("learning_rate must lie in (0, 1]")
        if self.l2_leaf_reg < 0 or self.gamma < 0 or self.min_child_weight < 0:
            problems.append("l2_leaf_reg, gamma and min_child_weight must be >= 0")
        if self.depth < 0:
            problems.append("depth must be >= 0")
        if not 0 < self.subsample <= 1:
            problems.append("subsample must lie in (0, 1]")
        if not self.cat_prior_weight > 0:
            problems.append("cat_prior_weight must be > 0")
        if self.cat_permutations < 1:
            problems.append("cat_permutations must be >= 1")
        if problems:
            raise DataError("; ".join(problems))

    def tree_params(self) -> TreeParams:
        return TreeParams(
            max_depth=self.depth,
            min_child_weight=self.min_child_weight,
            split_gain_min=self.gamma,
            l2_leaf_reg=self.l2_leaf_reg,
        )


@dataclass(frozen=True)
class CatEncoding:
    column: int
    prior: float
    stats: dict[float, float]  # raw code -> full-history statistic


@dataclass(frozen=True, eq=False)
class GbdtModel:
    base_score: float
    trees: tuple[RegressionTree, ...]
    params: BoostParams
    n_features: int
    cat_encoders: tuple[CatEncoding, ...] = ()

    @property
    def tree_weights(self) -> tuple[float, ...]:
        return (self.params.learning_rate,) * len(self.trees)


@dataclass(frozen=True)
class GradHess:
    g: np.ndarray
    h: np.ndarray


def grad_hess_squared(y, pred) -> GradHess:
    """Gradient and hessian of ``0.5 * (y - pred)**2`` with respect to ``pred``."""
    y = np.asarray(y, dtype=float).ravel()
    pred = np.asarray(pred, dtype=float).ravel()
    if y.shape != pred.shape:
        raise ShapeMismatch(f"y {y.shape} vs pred {pred.shape}")
    return GradHess(pred - y, np.ones_like(y))


def ordered_target_statistics(column, y, permutation, prior_weight: float = 1.0, prior: float | None = None) -> np.ndarray:
    """Encode each row from the targets of same-category rows earlier in ``permutation``.

    Row ``permutation[t]`` gets ``(sum_prev + a * P) / (count_prev + a)``.
    """
    column = np.asarray(column).ravel()
    y = np.asarray(y, dtype=float).ravel()
    perm = np.asarray(permutation, dtype=np.int64).ravel()
    n = y.shape[0]
    if column.shape[0] != n or perm.shape[0] != n:
        raise ShapeMismatch("column, y and permutation must have equal length")
    if not np.array_equal(np.sort(perm), np.arange(n)):
        raise InvalidPermutation("permutation is not a bijection over rows")
    if not prior_weight > 0:
        raise DataError("prior_weight must be > 0")
    P = float(np.mean(y)) if prior is None else float(prior)
    sums: dict = {}
    counts: dict = {}
    out = np.empty(n)
    aP = prior_weight * P
    for i in perm:
        c = column[i]
        s = sums.get(c, 0.0)
        k = counts.get(c, 0)
        out[i] = (s + aP) / (k + prior_weight)
        sums[c] = s + y[i]
        counts[c] = k + 1
    return out


def _full_history(column, y, prior_weight: float, prior: float) -> dict[float, float]:
    stats = {}
    for c in np.unique(column):
        sel = y[column == c]
        stats[float(c)] = (float(sel.sum()) + prior_weight * prior) / (sel.shape[0] + prior_weight)
    return stats


def _apply_cat(X: np.ndarray, encoders) -> np.ndarray:
    if not encoders:
        return X
    X = X.copy()
    for enc in encoders:
        col = X[:, enc.column]
        X[:, enc.column] = [enc.stats.get(float(v), enc.prior) for v in col]
    return X


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"X {X.shape} and y {y.shape} are not aligned")
    return X, y


def fit_gbdt(X, y, categorical_columns=(), params: BoostParams = BoostParams()) -> GbdtModel:
    X, y = _check_xy(X, y)
    n, d = X.shape
    if n < 2:
        raise DataError("boosting needs at least 2 rows")
    cats = sorted({int(c) for c in categorical_columns})
    if params.mode == "xgb" and cats:
        raise BadCategoricalSpec("xgb mode expects categoricals to be encoded upstream")
    if any(not 0 <= c < d for c in cats):
        raise BadCategoricalSpec(f"categorical column index out of range for {d} features")

    encoders = []
    if params.mode == "cat" and cats:
        P = float(np.mean(y))
        X = X.copy()
        for c in cats:
            raw = X[:, c].copy()
            acc = np.zeros(n)
            for p in range(params.cat_permutations):
                perm = generator(params.seed, _PERMUTE, c, p).permutation(n)
                acc += ordered_target_statistics(raw, y, perm, params.cat_prior_weight, P)
            X[:, c] = acc / params.cat_permutations
            encoders.append(CatEncoding(c, P, _full_history(raw, y, params.cat_prior_weight, P)))

    base = float(np.mean(y))
    tparams = params.tree_params()
    pre = presort(X)
    pred = np.full(n, base)
    rng = generator(params.seed, _SUBSAMPLE)
    n_sub = max(1, int(round(params.subsample * n)))
    trees = []
    for _ in range(params.iterations):
        gh = grad_hess_squared(y, pred)
        if n_sub < n:
            weight = np.zeros(n)
            weight[rng.choice(n, size=n_sub, replace=False)] = 1.0
        else:
            weight = None
        pre, rows, t, h, w = _prepare(None, -gh.g, gh.h, weight, pre)
        tree = _grow(pre, rows, t, h, w, True, tparams, None)
        if tree.feature[0] < 0:
            break
        trees.append(tree)
        pred = pred + params.learning_rate * predict_tree(tree, X)
    return GbdtModel(base, tuple(trees), params, d, tuple(encoders))


def staged_predict_gbdt(model: GbdtModel, X):
    """Yield predictions after 0, 1, ..., K trees."""
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ShapeMismatch(f"model expects {model.n_features} columns, got shape {X.shape}")
    X = _apply_cat(X, model.cat_encoders)
    acc = np.full(X.shape[0], model.base_score)
    yield acc.copy()
    for tree in model.trees:
        acc = acc + model.params.learning_rate * predict_tree(tree, X)
        yield acc.copy()


def predict_gbdt(model: GbdtModel, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ShapeMismatch(f"model expects {model.n_features} columns, got shape {X.shape}")
    X = _apply_cat(X, model.cat_encoders)
    acc = np.full(X.shape[0], model.base_score)
    for tree in model.trees:
        acc = acc + model.params.learning_rate * predict_tree(tree, X)
    return acc


def with_trees(model: GbdtModel, k: int) -> GbdtModel:
    """The same model truncated to its first ``k`` trees."""
    return replace(model, trees=model.trees[:k])
