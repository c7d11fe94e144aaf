"""Holdout metrics, k-fold cross-validation and hyperparameter search."""

from __future__ import annotations

import itertools
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from ._csvio import csv_text
from ._rng import derive_seed, generator
from .errors import BadK, ConfigError, EmptySpace, GhrentError, ShapeMismatch, ZeroVariance
from .models import ModelSpec, fit_model, parameter_problems, predict_model

DEFAULT_K = 5
RULES = ("choice", "uniform", "loguniform", "int")
_SEARCH_STREAM = 3


@dataclass(frozen=True)
class MetricsReport:
    r2: float
    mse: float
    rmse: float
    mae: float
    n: int
    target_scale: str = "log_e"

    def as_row(self) -> dict[str, float]:
        return {"r2": self.r2, "mse": self.mse, "rmse": self.rmse, "mae": self.mae}


def _aligned(y, pred):
    y = np.asarray(y, dtype=float).ravel()
    pred = np.asarray(pred, dtype=float).ravel()
    if y.shape != pred.shape or y.size == 0:
        raise ShapeMismatch(f"y {y.shape} and pred {pred.shape} must be equal-length and non-empty")
    return y, pred


def compute_metrics(y, pred, target_scale: str = "log_e") -> MetricsReport:
    """R2 (SST centred on mean(y)), MSE, RMSE = sqrt(MSE) and MAE.

    When ``y`` has no variance R2 is undefined: :class:`ZeroVariance` is raised
    with the remaining metrics attached as ``exc.report`` (r2 = nan).
    """
    y, pred = _aligned(y, pred)
    resid = y - pred
    n = y.shape[0]
    ssr = float(np.dot(resid, resid))
    mse = ssr / n
    mae = float(np.abs(resid).sum()) / n
    rmse = math.sqrt(mse)
    dev = y - y.mean()
    sst = float(np.dot(dev, dev))
    if sst == 0.0:
        report = MetricsReport(math.nan, mse, rmse, mae, n, target_scale)
        raise ZeroVariance("r2 is undefined when y has zero variance", report)
    return MetricsReport(1.0 - ssr / sst, mse, rmse, mae, n, target_scale)


def metrics_or_nan(y, pred, target_scale: str = "log_e") -> MetricsReport:
    """Like :func:`compute_metrics` but reports r2 = nan instead of raising."""
    try:
        return compute_metrics(y, pred, target_scale)
    except ZeroVariance as exc:
        return exc.report


def kfold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Shuffle ``0..n-1`` with the seeded generator and cut into ``k`` near-equal folds.

    The first ``n % k`` folds get one extra row.
    """
    if not (isinstance(k, (int, np.integer)) and 2 <= k <= n):
        raise BadK(f"k must satisfy 2 <= k <= n, got k={k}, n={n}")
    perm = generator(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


@dataclass(frozen=True)
class CvResult:
    folds: tuple[MetricsReport, ...]
    mean_r2: float
    undefined_folds: int  # folds whose validation target had zero variance

    @property
    def fold_r2(self) -> tuple[float, ...]:
        return tuple(f.r2 for f in self.folds)


def _run_fold(spec, X, y, idx, fold_idx, seed, cats):
    mask = np.ones(y.shape[0], dtype=bool)
    mask[idx] = False
    try:
        model = fit_model(spec, X[mask], y[mask], seed=derive_seed(seed, fold_idx), categorical_columns=cats)
        return metrics_or_nan(y[idx], predict_model(model, X[idx]))
    except GhrentError as exc:
        exc.fold = fold_idx
        if exc.args:
            exc.args = (f"fold {fold_idx}: {exc.args[0]}",) + exc.args[1:]
        raise


def cross_validate(
    spec: ModelSpec, X, y, k: int = DEFAULT_K, seed: int = 0, categorical_columns=(), n_jobs: int = 1
) -> CvResult:
    """Fold ``i`` trains on the complement with model seed ``derive_seed(seed, i)``.

    Folds with an undefined R2 are left out of the mean and counted.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"X {X.shape} and y {y.shape} are not aligned")
    folds = kfold_indices(y.shape[0], k, seed)
    jobs = [(spec, X, y, idx, i, seed, categorical_columns) for i, idx in enumerate(folds)]
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            reports = list(pool.map(lambda a: _run_fold(*a), jobs))
    else:
        reports = [_run_fold(*a) for a in jobs]
    defined = [r.r2 for r in reports if not math.isnan(r.r2)]
    undefined = len(reports) - len(defined)
    if undefined:
        warnings.warn(f"{undefined} of {len(reports)} folds have an undefined r2 and are excluded", RuntimeWarning)
    mean = math.fsum(defined) / len(defined) if defined else math.nan
    return CvResult(tuple(reports), mean, undefined)


# ----------------------------------------------------------------- search


@dataclass(frozen=True)
class SearchSpace:
    """Grid: ``params`` maps name -> list of candidates.

    Random: ``params`` maps name -> rule dict, one of
    ``{"rule": "choice", "values": [...]}``, ``{"rule": "uniform", "low": a, "high": b}``,
    ``{"rule": "loguniform", ...}`` or ``{"rule": "int", "low": a, "high": b}`` (inclusive).
    """

    kind: str
    mode: str
    params: Mapping[str, Any]

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise EmptySpace("; ".join(problems)) if self._empty() else ConfigError("; ".join(problems))

    def _empty(self) -> bool:
        if not self.params:
            return True
        if self.mode == "grid":
            return any(isinstance(v, (list, tuple)) and len(v) == 0 for v in self.params.values())
        return any(
            isinstance(r, Mapping) and r.get("rule") == "choice" and not r.get("values") for r in self.params.values()
        )

    def violations(self) -> list[str]:
        out = []
        if self.mode not in ("grid", "random"):
            return [f"search mode must be 'grid' or 'random', got {self.mode!r}"]
        if not self.params:
            return ["search space has no parameters"]
        for name, cand in self.params.items():
            if self.mode == "grid":
                if not isinstance(cand, (list, tuple)) or len(cand) == 0:
                    out.append(f"{name}: grid candidates must be a non-empty list")
                    continue
                values = list(cand)
            else:
                values = _rule_corners(name, cand, out)
            for v in values:
                for msg in parameter_problems(self.kind, {name: v}):
                    out.append(f"{name}={v!r}: {msg}")
        return out

    def grid(self) -> list[dict[str, Any]]:
        names = list(self.params)
        return [dict(zip(names, combo)) for combo in itertools.product(*(self.params[n] for n in names))]

    def draw(self, n_iter: int, seed: int) -> list[dict[str, Any]]:
        rng = generator(seed, _SEARCH_STREAM)
        return [{name: _draw(rng, rule) for name, rule in self.params.items()} for _ in range(n_iter)]


def _rule_corners(name, rule, out) -> list:
    if not isinstance(rule, Mapping) or rule.get("rule") not in RULES:
        out.append(f"{name}: random rule must be one of {RULES}")
        return []
    kind = rule["rule"]
    if kind == "choice":
        values = rule.get("values")
        if not isinstance(values, (list, tuple)) or not values:
            out.append(f"{name}: choice needs a non-empty 'values' list")
            return []
        return list(values)
    try:
        low, high = rule["low"], rule["high"]
    except KeyError:
        out.append(f"{name}: {kind} needs 'low' and 'high'")
        return []
    if not low <= high:
        out.append(f"{name}: low must be <= high")
        return []
    if kind == "loguniform" and not low > 0:
        out.append(f"{name}: loguniform bounds must be > 0")
        return []
    if kind == "int" and not (float(low).is_integer() and float(high).is_integer()):
        out.append(f"{name}: int bounds must be integers")
        return []
    return [low, high]


def _draw(rng: np.random.Generator, rule: Mapping[str, Any]):
    kind = rule["rule"]
    if kind == "choice":
        values = list(rule["values"])
        return values[int(rng.integers(len(values)))]
    low, high = rule["low"], rule["high"]
    if kind == "int":
        return int(rng.integers(int(low), int(high) + 1))
    if kind == "uniform":
        return float(rng.uniform(low, high)) if low < high else float(low)
    if low == high:
        return float(low)
    return float(math.exp(rng.uniform(math.log(low), math.log(high))))


@dataclass(frozen=True)
class Trial:
    params: dict[str, Any]
    fold_scores: tuple[float, ...]
    mean: float


@dataclass(frozen=True)
class SearchResult:
    kind: str
    best_params: dict[str, Any]
    best_cv_score: float
    trials: tuple[Trial, ...] = field(default_factory=tuple)
    best_index: int = 0


def _search(space, candidates, base_params, X, y, k, seed, categorical_columns, n_jobs) -> SearchResult:
    if not candidates:
        raise EmptySpace("search produced no candidates")

    def run(params):
        spec = ModelSpec(space.kind, {**base_params, **params})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            cv = cross_validate(spec, X, y, k, seed, categorical_columns)
        return Trial(dict(params), cv.fold_r2, cv.mean_r2)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            trials = list(pool.map(run, candidates))
    else:
        trials = [run(c) for c in candidates]
    best = 0
    for i, t in enumerate(trials):  # strict '>' keeps the earliest trial on ties
        if not math.isnan(t.mean) and (math.isnan(trials[best].mean) or t.mean > trials[best].mean):
            best = i
    return SearchResult(space.kind, dict(trials[best].params), trials[best].mean, tuple(trials), best)


def grid_search(
    space: SearchSpace, X, y, k: int = DEFAULT_K, seed: int = 0, categorical_columns=(), n_jobs: int = 1,
    base_params: Mapping[str, Any] | None = None,
) -> SearchResult:
    """Cross-validate every point of the Cartesian product, in declared order.

    ``base_params`` are fixed settings that every trial inherits.
    """
    if space.mode != "grid":
        raise ConfigError("grid_search needs a grid-type space")
    return _search(space, space.grid(), dict(base_params or {}), X, y, k, seed, categorical_columns, n_jobs)


def random_search(
    space: SearchSpace, n_iter: int, X, y, k: int = DEFAULT_K, seed: int = 0, categorical_columns=(), n_jobs: int = 1,
    base_params: Mapping[str, Any] | None = None,
) -> SearchResult:
    if space.mode != "random":
        raise ConfigError("random_search needs a random-type space")
    if n_iter < 1:
        raise EmptySpace("n_iter must be >= 1")
    candidates = space.draw(n_iter, seed)
    return _search(space, candidates, dict(base_params or {}), X, y, k, seed, categorical_columns, n_jobs)


def trials_csv(result: SearchResult) -> str:
    """One row per trial: parameters, per-fold R2, mean R2."""
    names: list[str] = []
    for t in result.trials:
        for n in t.params:
            if n not in names:
                names.append(n)
    k = max((len(t.fold_scores) for t in result.trials), default=0)
    header = ["trial", *names, *(f"fold{i + 1}_r2" for i in range(k)), "mean_r2", "best"]
    rows = (
        [i, *(t.params.get(n, "") for n in names), *t.fold_scores, t.mean, int(i == result.best_index)]
        for i, t in enumerate(result.trials)
    )
    return csv_text(header, rows)


def search_summary_json(result: SearchResult) -> str:
    doc = {
        "kind": result.kind,
        "best_params": result.best_params,
        "best_cv_score": None if math.isnan(result.best_cv_score) else result.best_cv_score,
        "n_trials": len(result.trials),
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"
