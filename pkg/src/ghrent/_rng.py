"""Seed derivation.

All randomness goes through numpy's PCG64 bit generator, whose output stream
is fixed across platforms for a given seed. Child streams are keyed by a
tuple of non-negative integers, e.g. ``(seed, tree_index)``; a key never
depends on how many siblings exist, which gives prefix stability.
"""

from __future__ import annotations

import numpy as np


def generator(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in key])))


def derive_seed(*key: int) -> int:
    """A 63-bit integer seed deterministically derived from ``key``."""
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1, np.uint64)[0] >> np.uint64(1))
