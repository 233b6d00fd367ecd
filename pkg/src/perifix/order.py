"""Orthant cone orders, order intervals, and the product-cone construction.

An orthant cone is described by a sign pattern s in {+1,-1}^n and induces the
partial order  x <= y  iff  s_i * (y_i - x_i) >= 0 for every i.  Orthant cones
are self-dual, so all order tests reduce to componentwise sign tests.  The
product cone K x (-K) is what makes the symmetric doubled system monotone.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

# All ordered vectors in this package come out of numerical integration, so
# comparisons take an absolute slack.  This is the package-wide default.
DEFAULT_EPS = 1e-9


@dataclass(frozen=True)
class OrthantCone:
    """Sign-pattern cone {x : signs_i * x_i >= 0 for all i}."""

    signs: tuple[int, ...]

    def __post_init__(self):
        if len(self.signs) == 0:
            raise ValueError("cone needs at least one coordinate")
        if any(s not in (1, -1) for s in self.signs):
            raise ValueError(f"cone signs must be +1 or -1, got {self.signs}")

    @property
    def dim(self) -> int:
        return len(self.signs)

    @cached_property
    def signs_vec(self) -> np.ndarray:
        return np.array(self.signs, dtype=float)

    @classmethod
    def positive(cls, n: int) -> "OrthantCone":
        """The nonnegative orthant of dimension n."""
        return cls((1,) * n)


def _as_vector(v, dim: int, what: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (dim,):
        raise ValueError(f"{what} has shape {arr.shape}, expected ({dim},)")
    return arr


def cmp_leq(cone: OrthantCone, x, y, eps: float = DEFAULT_EPS) -> bool:
    """True iff x <= y in the cone order, up to absolute slack eps."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    xv = _as_vector(x, cone.dim, "x")
    yv = _as_vector(y, cone.dim, "y")
    return bool(np.all(cone.signs_vec * (yv - xv) >= -eps))


def order_margin(cone: OrthantCone, x, y) -> float:
    """Worst sign-adjusted component of y - x.

    Nonnegative iff x <= y exactly; cmp_leq(cone, x, y, eps) is equivalent to
    order_margin(cone, x, y) >= -eps.
    """
    xv = _as_vector(x, cone.dim, "x")
    yv = _as_vector(y, cone.dim, "y")
    return float(np.min(cone.signs_vec * (yv - xv)))


@dataclass
class OrderInterval:
    """Order interval [lo, hi] = {x : lo <= x <= hi} for an orthant cone.

    Geometrically a box; for sign -1 coordinates the geometric bounds are
    swapped relative to (lo, hi).
    """

    cone: OrthantCone
    lo: np.ndarray
    hi: np.ndarray

    def __init__(self, cone: OrthantCone, lo, hi, eps: float = 0.0):
        self.cone = cone
        self.lo = _as_vector(lo, cone.dim, "lo")
        self.hi = _as_vector(hi, cone.dim, "hi")
        if not cmp_leq(cone, self.lo, self.hi, eps):
            raise ValueError("interval endpoints are not ordered: lo <= hi fails")

    @property
    def dim(self) -> int:
        return self.cone.dim

    def geometric_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Componentwise (min, max) corners of the underlying box."""
        return np.minimum(self.lo, self.hi), np.maximum(self.lo, self.hi)


def in_interval(ival: OrderInterval, x, eps: float = DEFAULT_EPS) -> bool:
    """True iff lo <= x <= hi in the interval's cone order (closed interval)."""
    return cmp_leq(ival.cone, ival.lo, x, eps) and cmp_leq(ival.cone, x, ival.hi, eps)


def product_cone(K: OrthantCone) -> OrthantCone:
    """The cone K x (-K) on the doubled space.

    Induces (x, y) <= (xbar, ybar) iff x <=_K xbar and ybar <=_K y, which is
    the order that makes the doubled symmetric system monotone.
    """
    return OrthantCone(K.signs + tuple(-s for s in K.signs))
