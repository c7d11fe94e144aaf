"""Uniform fit/predict over the model kinds used by the pipeline.

Parameters arrive as plain dicts (from the run config or a search trial)
and are turned into the per-module dataclasses here. Both boosting modes
produce a :class:`GbdtModel`; the ``mean`` kind is a constant predictor
stored as an intercept-only linear model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .boost import BoostParams, GbdtModel, fit_gbdt, predict_gbdt
from .errors import ConfigError, ShapeMismatch
from .forest import ForestModel, ForestParams, fit_forest, predict_forest
from .linear import LinearModel, fit_ols, predict_linear
from .svr import SvrModel, SvrParams, fit_svr, predict_svr
from .tree import TreeParams

KINDS = ("linear", "svr", "forest", "xgb", "cat", "mean")
REPORTED_KINDS = ("linear", "svr", "forest", "xgb", "cat")

# features layout each kind trains on; cat mode consumes raw category codes
LAYOUT = {"linear": "onehot", "svr": "onehot", "forest": "onehot", "xgb": "onehot", "cat": "codes", "mean": "onehot"}

# accepted parameter names per kind, with aliases mapped to the dataclass field
_ALIASES: dict[str, dict[str, str]] = {
    "linear": {"fit_intercept": "fit_intercept"},
    "mean": {},
    "svr": {
        "C": "C", "epsilon": "epsilon", "kernel": "kernel", "gamma": "gamma",
        "tol": "tol", "max_passes": "max_passes",
    },
    "forest": {
        "n_estimators": "n_estimators", "max_depth": "max_depth", "max_features": "feature_subsample",
        "feature_subsample": "feature_subsample", "min_samples_leaf": "min_samples_leaf", "bootstrap": "bootstrap",
    },
    "xgb": {
        "iterations": "iterations", "n_estimators": "iterations", "learning_rate": "learning_rate",
        "depth": "depth", "max_depth": "depth", "l2_leaf_reg": "l2_leaf_reg", "reg_lambda": "l2_leaf_reg",
        "gamma": "gamma", "min_child_weight": "min_child_weight", "subsample": "subsample",
        "sub_sample": "subsample",
    },
}
_ALIASES["cat"] = {
    **{k: v for k, v in _ALIASES["xgb"].items() if v not in ("subsample", "gamma", "min_child_weight")},
    "cat_prior_weight": "cat_prior_weight", "cat_permutations": "cat_permutations",
}

# defaults for settings a run config leaves out (tuned values live in configs/study.toml)
_DEFAULTS: dict[str, dict[str, Any]] = {
    "linear": {"fit_intercept": False},
    "mean": {},
    "svr": {"kernel": "rbf", "C": 1.0, "epsilon": 0.1},
    "forest": {"n_estimators": 100, "feature_subsample": "sqrt"},
    "xgb": {"iterations": 100, "learning_rate": 0.3, "depth": 6, "l2_leaf_reg": 1.0},
    "cat": {"iterations": 1000, "learning_rate": 0.03, "depth": 6, "l2_leaf_reg": 3.0},
}


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        unknown = sorted(set(self.params) - set(_ALIASES[self.kind]))
        if unknown:
            raise ConfigError(f"{self.kind}: unknown parameters {unknown}")

    @property
    def layout(self) -> str:
        return LAYOUT[self.kind]

    def resolved(self) -> dict[str, Any]:
        """Defaults overlaid with the given params, keyed by dataclass field name."""
        out = dict(_DEFAULTS[self.kind])
        for k, v in self.params.items():
            out[_ALIASES[self.kind][k]] = v
        return out


def parameter_problems(kind: str, params: Mapping[str, Any]) -> list[str]:
    """Validation messages for a parameter assignment; empty when it is valid."""
    try:
        spec = ModelSpec(kind, dict(params))
        _build(spec, seed=0)
    except (ConfigError, ValueError, TypeError) as exc:
        return [str(exc)]
    return []


def _max_features(value):
    if value in (None, "all", "auto"):
        return "all"
    if value == "sqrt":
        return "sqrt"
    v = float(value)
    if not 0 < v <= 1:
        raise ValueError("max_features must be 'sqrt', 'all' or a fraction in (0, 1]")
    return v


def _build(spec: ModelSpec, seed: int):
    p = spec.resolved()
    if spec.kind == "linear":
        return {"fit_intercept": bool(p.get("fit_intercept", False))}
    if spec.kind == "mean":
        return {}
    if spec.kind == "svr":
        return SvrParams(**p)
    if spec.kind == "forest":
        depth = p.pop("max_depth", None)
        tree = TreeParams(
            max_depth=None if depth in (None, "none") else int(depth),
            min_samples_leaf=int(p.pop("min_samples_leaf", 1)),
            feature_subsample=_max_features(p.pop("feature_subsample", "sqrt")),
        )
        return ForestParams(n_estimators=int(p.pop("n_estimators")), tree=tree, seed=seed, **p)
    return BoostParams(mode=spec.kind, seed=seed, **p)


def fit_model(spec: ModelSpec, X, y, seed: int = 0, categorical_columns=(), n_jobs: int = 1):
    """Fit ``spec`` on ``(X, y)``; ``seed`` feeds every random draw inside the model."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"X {X.shape} and y {y.shape} are not aligned")
    params = _build(spec, seed)
    if spec.kind == "linear":
        return fit_ols(X, y, **params)
    if spec.kind == "mean":
        return LinearModel(np.zeros(X.shape[1]), float(np.mean(y)), True)
    if spec.kind == "svr":
        return fit_svr(X, y, params)
    if spec.kind == "forest":
        return fit_forest(X, y, params, n_jobs=n_jobs)
    cats = categorical_columns if spec.kind == "cat" else ()
    return fit_gbdt(X, y, cats, params)


def predict_model(model, X) -> np.ndarray:
    if isinstance(model, LinearModel):
        return predict_linear(model, X)
    if isinstance(model, SvrModel):
        return predict_svr(model, X)
    if isinstance(model, ForestModel):
        return predict_forest(model, X)
    if isinstance(model, GbdtModel):
        return predict_gbdt(model, X)
    raise TypeError(f"not a trained model: {type(model).__name__}")
