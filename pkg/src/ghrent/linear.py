"""Ordinary least squares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteInput, ShapeMismatch

RCOND = 1e-10


@dataclass(frozen=True)
class LinearModel:
    coefficients: np.ndarray
    intercept: float = 0.0
    fitted_intercept: bool = False

    @property
    def n_features(self) -> int:
        return self.coefficients.shape[0]


def _as_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] < 1:
        raise ShapeMismatch(f"X {X.shape} and y {y.shape} are not aligned")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise NonFiniteInput("OLS inputs must be finite")
    return X, y


def fit_ols(X, y, fit_intercept: bool = False) -> LinearModel:
    """Least-squares fit; minimum-norm slopes when ``X`` is rank deficient.

    Solved through the SVD (LAPACK gelsd), discarding singular values below
    ``RCOND`` times the largest. With an intercept the columns are centred
    first, so the intercept itself is not penalised by the minimum-norm rule.
    """
    X, y = _as_xy(X, y)
    if fit_intercept:
        x_mean = X.mean(axis=0)
        y_mean = y.mean()
        beta = np.linalg.lstsq(X - x_mean, y - y_mean, rcond=RCOND)[0]
        intercept = float(y_mean - x_mean @ beta)
    else:
        beta = np.linalg.lstsq(X, y, rcond=RCOND)[0]
        intercept = 0.0
    return LinearModel(np.ascontiguousarray(beta), intercept, fit_intercept)


def predict_linear(model: LinearModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ShapeMismatch(f"model expects {model.n_features} columns, got shape {X.shape}")
    return X @ model.coefficients + model.intercept
