"""Random forest regression: bootstrap-bagged CART trees, averaged."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._rng import generator
from .errors import DataError, ShapeMismatch
from .tree import RegressionTree, TreeParams, _grow, _prepare, predict_tree, presort


@dataclass(frozen=True)
class ForestParams:
    n_estimators: int = 100
    tree: TreeParams = field(default_factory=lambda: TreeParams(feature_subsample="sqrt"))
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise DataError("n_estimators must be >= 1")


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple[RegressionTree, ...]
    params: ForestParams

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features


def _fit_one(b, pre, y, params: ForestParams):
    rng = generator(params.seed, b)
    n = y.shape[0]
    if params.bootstrap:
        # drawn before any node-level draws from the same stream
        weight = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)
    else:
        weight = np.ones(n)
    pre, rows, t, h, w = _prepare(None, y, None, weight, pre)
    return _grow(pre, rows, t, h, w, False, params.tree, rng)


def fit_forest(X, y, params: ForestParams = ForestParams(), n_jobs: int = 1) -> ForestModel:
    """Tree ``b`` uses the generator keyed ``(seed, b)``, so the fit does not
    depend on ``n_jobs`` and the first trees are unchanged when
    ``n_estimators`` grows."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"X {X.shape} and y {y.shape} are not aligned")
    if X.shape[0] < 2:
        raise DataError("a forest needs at least 2 rows")
    pre = presort(X)
    jobs = range(params.n_estimators)
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            trees = list(pool.map(lambda b: _fit_one(b, pre, y, params), jobs))
    else:
        trees = [_fit_one(b, pre, y, params) for b in jobs]
    return ForestModel(tuple(trees), params)


def predict_forest(model: ForestModel, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ShapeMismatch(f"forest expects {model.n_features} columns, got shape {X.shape}")
    acc = np.zeros(X.shape[0])
    for tree in model.trees:  # fixed index order keeps the sum reproducible
        acc += predict_tree(tree, X)
    return acc / len(model.trees)
