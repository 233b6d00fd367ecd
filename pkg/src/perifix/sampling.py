"""Deterministic low-discrepancy sampling helpers.

Sample points come from an additive-recurrence (Kronecker) sequence with a
seeded offset, so every check is reproducible from its recorded seed while
still covering boxes far more evenly than i.i.d. draws.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def _harmonious(dim: int) -> tuple[float, ...]:
    # Unique positive root of x**(dim+1) = x + 1, by fixed-point iteration;
    # its inverse powers give the best-known Kronecker directions.
    x = 2.0
    for _ in range(80):
        x = (1.0 + x) ** (1.0 / (dim + 1))
    return tuple((1.0 / x) ** k for k in range(1, dim + 1))


def unit_points(n: int, dim: int, seed: int = 0) -> np.ndarray:
    """n low-discrepancy points in [0, 1)^dim with a seed-dependent offset."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    alpha = np.array(_harmonious(dim))
    offset = np.random.default_rng(seed).random(dim)
    idx = np.arange(1, n + 1, dtype=float)[:, None]
    return (offset + idx * alpha) % 1.0


def box_points(n: int, lo, hi, seed: int = 0) -> np.ndarray:
    """n low-discrepancy points in the axis-aligned box [lo, hi]."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    return lo + unit_points(n, lo.size, seed) * (hi - lo)
