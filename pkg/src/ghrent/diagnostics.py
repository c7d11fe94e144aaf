"""Residuals, prediction-error summaries and feature importance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._csvio import csv_text
from ._rng import generator
from ._stats import Histogram, histogram
from .boost import GbdtModel
from .errors import NoSplits, ScaleMismatch, ShapeMismatch, ZeroVariance
from .evaluate import compute_metrics, metrics_or_nan
from .features import TargetVector, transform_target
from .forest import ForestModel
from .models import predict_model


@dataclass(frozen=True)
class ResidualSeries:
    residuals: np.ndarray
    scale: str

    def __len__(self) -> int:
        return self.residuals.shape[0]


@dataclass(frozen=True)
class ImportanceReport:
    entries: tuple[tuple[str, float], ...]  # sorted by score, descending
    method: str

    def names(self) -> list[str]:
        return [n for n, _ in self.entries]

    def score(self, name: str) -> float:
        return dict(self.entries)[name]


def compute_residuals(y: TargetVector, pred: TargetVector, in_raw_scale: bool = False) -> ResidualSeries:
    """``y - pred``; with ``in_raw_scale`` both sides are exponentiated first."""
    if y.scale != pred.scale:
        raise ScaleMismatch(f"y is {y.scale} but pred is {pred.scale}")
    if len(y) != len(pred):
        raise ShapeMismatch(f"{len(y)} targets vs {len(pred)} predictions")
    if in_raw_scale:
        y, pred = transform_target(y, "inverse"), transform_target(pred, "inverse")
    res = y.values - pred.values
    if not np.isfinite(res).all():
        raise ScaleMismatch("residuals are not finite")
    return ResidualSeries(res, y.scale)


def residual_histogram(res: ResidualSeries, bins: int = 30) -> Histogram:
    return histogram(res.residuals, bins)


def prediction_error_summary(y, pred) -> tuple[float, float, float]:
    """Slope and intercept of the least-squares line of ``pred`` on ``y``, plus R2."""
    y = np.asarray(y, dtype=float).ravel()
    pred = np.asarray(pred, dtype=float).ravel()
    if y.shape != pred.shape:
        raise ShapeMismatch(f"y {y.shape} vs pred {pred.shape}")
    if y.size < 2:
        raise ZeroVariance("need at least two points for a best-fit line")
    dy = y - y.mean()
    sxx = float(dy @ dy)
    if sxx == 0.0:
        raise ZeroVariance("y has zero variance")
    slope = float(dy @ (pred - pred.mean())) / sxx
    intercept = float(pred.mean() - slope * y.mean())
    return slope, intercept, compute_metrics(y, pred).r2


def _ranked(scores: np.ndarray, names: Sequence[str], method: str) -> ImportanceReport:
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    return ImportanceReport(tuple((names[j], float(scores[j])) for j in order), method)


def _names(names, d):
    if names is None:
        return [f"f{j}" for j in range(d)]
    if len(names) != d:
        raise ShapeMismatch(f"{len(names)} names for {d} features")
    return list(names)


def gain_importance(model: ForestModel | GbdtModel, feature_names: Sequence[str] | None = None) -> ImportanceReport:
    """Split gain summed per feature over every tree, normalised to sum to one."""
    if not isinstance(model, (ForestModel, GbdtModel)):
        raise TypeError("gain importance needs a forest or boosted model")
    d = model.n_features
    totals = np.zeros(d)
    for tree in model.trees:
        internal = tree.feature >= 0
        np.add.at(totals, tree.feature[internal], tree.gain[internal])
    total = totals.sum()
    if not total > 0:
        raise NoSplits("model has no splits to attribute")
    return _ranked(totals / total, _names(feature_names, d), "gain")


def permutation_importance(
    model, X, y, repeats: int = 5, seed: int = 0, feature_names: Sequence[str] | None = None
) -> ImportanceReport:
    """Mean drop in R2 when one column is shuffled; the model is never refitted.

    Repeat ``r`` of feature ``j`` shuffles with the generator keyed ``(seed, j, r)``.
    """
    X = np.array(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"X {X.shape} and y {y.shape} are not aligned")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    base = metrics_or_nan(y, predict_model(model, X)).r2
    d = X.shape[1]
    scores = np.zeros(d)
    for j in range(d):
        original = X[:, j].copy()
        drops = []
        for r in range(repeats):
            X[:, j] = original[generator(seed, j, r).permutation(X.shape[0])]
            drops.append(base - metrics_or_nan(y, predict_model(model, X)).r2)
        X[:, j] = original
        scores[j] = float(np.mean(drops))
    return _ranked(scores, _names(feature_names, d), "permutation")


# ---------------------------------------------------------------- exports


def residuals_csv(res: ResidualSeries) -> str:
    return csv_text(["residual"], ([r] for r in res.residuals))


def histogram_csv(h: Histogram) -> str:
    rows = ([h.edges[i], h.edges[i + 1], h.counts[i]] for i in range(len(h.counts)))
    return csv_text(["left", "right", "count"], rows)


def scatter_csv(y, pred) -> str:
    return csv_text(["actual", "predicted"], zip(np.asarray(y, dtype=float), np.asarray(pred, dtype=float)))


def importance_csv(report: ImportanceReport) -> str:
    return csv_text(["feature", "score", "method"], ([n, s, report.method] for n, s in report.entries))
