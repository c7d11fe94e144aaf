"""Feature engineering: one-hot categoricals, top-K amenity membership,
coordinates, log-price target, IQR outlier fences and the holdout split."""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from ._rng import generator
from ._stats import quantile7
from .errors import (
    DataError,
    DegenerateTarget,
    EmptyTrain,
    MissingGeo,
    NonFiniteInput,
    NonPositivePrice,
    NonPositiveValue,
    ScaleMismatch,
    ShapeMismatch,
    TooFewRows,
)
from .geocode import GeoPoint
from .ingest import ListingTable, amenity_tokens

NUMERIC_ROLES = ("bedrooms", "bathrooms")
CATEGORICAL_ROLES = ("listing_category", "furnishing", "condition", "house_type", "location")
LOCATION_POLICIES = ("drop_row", "error")
LAYOUTS = ("onehot", "codes")


@dataclass(frozen=True)
class FeatureConfig:
    one_hot_roles: tuple[str, ...] = ("house_type", "condition", "furnishing")
    amenity_top_k: int = 20
    outlier_k: float = 1.5
    split_ratio: float = 0.8
    split_seed: int = 0
    unknown_location_policy: str = "drop_row"

    def __post_init__(self):
        object.__setattr__(self, "one_hot_roles", tuple(self.one_hot_roles))
        problems = self.violations()
        if problems:
            raise DataError("; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        for role in self.one_hot_roles:
            if role not in CATEGORICAL_ROLES:
                out.append(f"one_hot_roles: {role!r} is not a categorical role {CATEGORICAL_ROLES}")
        if len(set(self.one_hot_roles)) != len(self.one_hot_roles):
            out.append("one_hot_roles: duplicate roles")
        if not (isinstance(self.amenity_top_k, int) and self.amenity_top_k >= 1):
            out.append("amenity_top_k must be an integer >= 1")
        if not self.outlier_k > 0:
            out.append("outlier_k must be > 0")
        if not 0 < self.split_ratio < 1:
            out.append("split_ratio must lie in (0, 1)")
        if self.unknown_location_policy not in LOCATION_POLICIES:
            out.append(f"unknown_location_policy must be one of {LOCATION_POLICIES}")
        return out


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    column_names: tuple[str, ...]

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != len(self.column_names):
            raise ShapeMismatch(f"matrix shape {v.shape} vs {len(self.column_names)} column names")
        if not np.isfinite(v).all():
            raise NonFiniteInput("feature matrix contains non-finite values")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "column_names", tuple(self.column_names))

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def shape(self):
        return self.values.shape

    def take(self, rows) -> "FeatureMatrix":
        return FeatureMatrix(self.values[np.asarray(rows, dtype=np.intp)], self.column_names)


@dataclass(frozen=True)
class TargetVector:
    values: np.ndarray
    scale: str = "log_e"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if self.scale not in ("log_e", "raw"):
            raise DataError(f"unknown target scale {self.scale!r}")
        if not np.isfinite(v).all():
            raise NonFiniteInput("target contains non-finite values")
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self) -> int:
        return self.values.shape[0]

    def take(self, rows) -> "TargetVector":
        return TargetVector(self.values[np.asarray(rows, dtype=np.intp)], self.scale)


@dataclass(frozen=True)
class FittedEncoder:
    category_levels: dict[str, tuple[str, ...]]
    amenity_vocab: tuple[str, ...]
    outlier_fences: tuple[float, float]
    numeric_medians: dict[str, float]
    unknown_location_policy: str = "drop_row"
    target_transform: str = "log_e"
    feature_names: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "feature_names", self.names("onehot"))
        if len(set(self.feature_names)) != len(self.feature_names):
            dupes = sorted(n for n, c in Counter(self.feature_names).items() if c > 1)
            raise DataError(f"duplicate feature names {dupes}")
        lo, hi = self.outlier_fences
        if not lo <= hi:
            raise DataError("outlier fences must satisfy lower <= upper")

    def names(self, layout: str = "onehot") -> tuple[str, ...]:
        """Column names for ``layout``.

        ``onehot`` expands each categorical role into indicator columns;
        ``codes`` keeps one column per role holding the level index (-1 for
        missing or unseen), for models that encode categoricals themselves.
        """
        if layout not in LAYOUTS:
            raise DataError(f"unknown layout {layout!r}")
        names = ["lng", "lat", *NUMERIC_ROLES]
        for role, levels in self.category_levels.items():
            if layout == "onehot":
                names += [f"{role}_{lvl}" for lvl in levels]
            else:
                names.append(role)
        names += [f"amenity_{tok}" for tok in self.amenity_vocab]
        return tuple(names)

    def categorical_columns(self, layout: str = "codes") -> tuple[int, ...]:
        if layout != "codes":
            return ()
        start = 2 + len(NUMERIC_ROLES)
        return tuple(range(start, start + len(self.category_levels)))

    def is_outlier(self, log_price: float) -> bool:
        lo, hi = self.outlier_fences
        return not lo <= log_price <= hi


def _check_aligned(table: ListingTable, geopoints: Sequence) -> None:
    if len(geopoints) != len(table):
        raise ShapeMismatch(f"{len(geopoints)} geopoints for {len(table)} rows")


def _category_value(rec, role: str) -> str | None:
    value = rec.get(role)
    if value is None:
        return None
    value = str(value).strip()
    return value or None


def fit_encoder(train: ListingTable, geopoints: Sequence[GeoPoint | None], config: FeatureConfig) -> FittedEncoder:
    """Learn category levels, amenity vocabulary, medians and fences from train rows."""
    _check_aligned(train, geopoints)
    if not len(train):
        raise EmptyTrain("cannot fit an encoder on zero rows")
    prices = []
    for rec in train.records:
        if rec.price is None or not rec.price > 0:
            raise NonPositivePrice(f"row {rec.id}: price missing or non-positive")
        prices.append(rec.price)

    levels = {
        role: tuple(sorted({v for v in (_category_value(r, role) for r in train.records) if v is not None}))
        for role in config.one_hot_roles
    }

    counts: Counter = Counter()
    for rec in train.records:
        counts.update(amenity_tokens(rec.amenities))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    vocab = tuple(tok for tok, _ in ranked[: config.amenity_top_k])

    medians = {}
    for role in NUMERIC_ROLES:
        present = [r.get(role) for r in train.records if r.get(role) is not None]
        medians[role] = float(np.median(present)) if present else 0.0

    log_prices = np.log(np.asarray(prices, dtype=float))
    q1, q3 = (float(v) for v in quantile7(log_prices, [0.25, 0.75]))
    iqr = q3 - q1
    if log_prices.min() == log_prices.max():
        warnings.warn("all training prices are equal; outlier fences collapse", DegenerateTarget, stacklevel=2)
    fences = (q1 - config.outlier_k * iqr, q3 + config.outlier_k * iqr)

    return FittedEncoder(
        category_levels=levels,
        amenity_vocab=vocab,
        outlier_fences=fences,
        numeric_medians=medians,
        unknown_location_policy=config.unknown_location_policy,
    )


def encode_rows(
    table: ListingTable,
    geopoints: Sequence[GeoPoint | None],
    enc: FittedEncoder,
    layout: str = "onehot",
) -> tuple[FeatureMatrix, list[int]]:
    """Encode features only (no target). Returns the matrix and kept row positions."""
    _check_aligned(table, geopoints)
    names = enc.names(layout)
    level_index = {role: {lvl: i for i, lvl in enumerate(lv)} for role, lv in enc.category_levels.items()}
    vocab_index = {tok: i for i, tok in enumerate(enc.amenity_vocab)}
    rows, kept = [], []
    for pos, (rec, gp) in enumerate(zip(table.records, geopoints)):
        if gp is None:
            if enc.unknown_location_policy == "error":
                raise MissingGeo(f"row {rec.id}: no coordinates for location {rec.location!r}")
            continue
        row = [gp.lng, gp.lat]
        for role in NUMERIC_ROLES:
            v = rec.get(role)
            row.append(float(enc.numeric_medians[role] if v is None else v))
        for role, lv in enc.category_levels.items():
            idx = level_index[role].get(_category_value(rec, role), -1)
            if layout == "onehot":
                block = [0.0] * len(lv)
                if idx >= 0:
                    block[idx] = 1.0
                row += block
            else:
                row.append(float(idx))
        amen = [0.0] * len(vocab_index)
        for tok in amenity_tokens(rec.amenities):
            j = vocab_index.get(tok)
            if j is not None:
                amen[j] = 1.0
        row += amen
        rows.append(row)
        kept.append(pos)
    values = np.asarray(rows, dtype=float).reshape(len(rows), len(names))
    return FeatureMatrix(values, names), kept


def transform(
    table: ListingTable,
    geopoints: Sequence[GeoPoint | None],
    enc: FittedEncoder,
    drop_outliers: bool = False,
    layout: str = "onehot",
) -> tuple[FeatureMatrix, TargetVector, list[str]]:
    for rec in table.records:
        if rec.price is None or not rec.price > 0:
            raise NonPositivePrice(f"row {rec.id}: price missing or non-positive")
    X, kept = encode_rows(table, geopoints, enc, layout)
    y = np.log(np.asarray([table.records[i].price for i in kept], dtype=float))
    if drop_outliers and len(kept):
        lo, hi = enc.outlier_fences
        mask = (y >= lo) & (y <= hi)
        X = X.take(np.flatnonzero(mask))
        y = y[mask]
        kept = [k for k, m in zip(kept, mask) if m]
    return X, TargetVector(y, "log_e"), [table.records[i].id for i in kept]


def transform_target(values: TargetVector, direction: str) -> TargetVector:
    if direction == "forward":
        if values.scale != "raw":
            raise ScaleMismatch(f"forward transform needs raw scale, got {values.scale}")
        if (values.values <= 0).any():
            raise NonPositiveValue("log transform needs strictly positive values")
        return TargetVector(np.log(values.values), "log_e")
    if direction == "inverse":
        if values.scale != "log_e":
            raise ScaleMismatch(f"inverse transform needs log_e scale, got {values.scale}")
        return TargetVector(np.exp(values.values), "raw")
    raise DataError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def split_indices(n: int, ratio: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if n < 2:
        raise TooFewRows(f"need at least 2 rows to split, got {n}")
    if not 0 < ratio < 1:
        raise DataError("ratio must lie in (0, 1)")
    # decimal-exact so that e.g. 0.29 * 100 floors to 29, not 28
    n_train = math.floor(Fraction(repr(float(ratio))) * n)
    if n_train == 0 or n_train == n:
        raise TooFewRows(f"ratio {ratio} on {n} rows leaves an empty side")
    perm = generator(seed).permutation(n)
    return perm[:n_train], perm[n_train:]


def train_test_split(X, y, ratio: float = 0.8, seed: int = 0):
    """Seeded holdout split; returns ``(X_train, y_train, X_test, y_test)``."""
    n = X.shape[0]
    if len(y) != n:
        raise ShapeMismatch(f"X has {n} rows, y has {len(y)}")
    tr, te = split_indices(n, ratio, seed)

    def take(a, idx):
        return a.take(idx) if hasattr(a, "column_names") or isinstance(a, TargetVector) else np.asarray(a)[idx]

    return take(X, tr), take(y, tr), take(X, te), take(y, te)
