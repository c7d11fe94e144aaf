"""Small numeric helpers shared by ingest, features and diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySeries


@dataclass(frozen=True)
class Histogram:
    edges: tuple[float, ...]
    counts: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.counts)


def quantile7(values, q):
    """Type-7 (linear interpolation) sample quantile."""
    return np.quantile(np.asarray(values, dtype=float), q, method="linear")


def five_number(values) -> tuple[float, float, float, float, float]:
    mn, q1, med, q3, mx = quantile7(values, [0.0, 0.25, 0.5, 0.75, 1.0])
    return float(mn), float(q1), float(med), float(q3), float(mx)


def histogram(values, bins: int) -> Histogram:
    """Equal-width histogram over [min, max].

    Bins are left-closed except the last, which is closed on both sides. A
    zero-width range is widened symmetrically by a few ulps-per-bin so the
    edges stay strictly increasing and every value lands in one bin.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise EmptySeries("cannot histogram an empty series")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        half = max(abs(lo), 1.0) * np.finfo(float).eps * 4 * bins
        lo, hi = lo - half, hi + half
    edges = np.linspace(lo, hi, bins + 1)
    idx = np.searchsorted(edges, v, side="right") - 1
    idx = np.clip(idx, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    return Histogram(tuple(float(e) for e in edges), tuple(int(c) for c in counts))
