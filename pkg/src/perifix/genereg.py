"""Cyclic gene-regulation models with periodically forced degradation.

The generated chain is

    x1' = g(xn) - a1 * x1,
    xi' = x(i-1) - ai * xi          (2 <= i <= n-1),
    xn' = x(n-1) - an(t) * xn,

with constant positive a1..a(n-1), a periodic positive rate an(t), and a
positive decreasing production response g.  This is a closed loop with
scalar input u = g(xn), negative feedback through the last coordinate.

Besides the generator this module provides the canonical invariant box
(cumulative production bound over the decay rates) and the slope condition
check: when the steepest descent of g on the reachable input range stays
below the product of the decay rates, the bracketing iteration provably
collapses and the model has a unique, globally attracting harmonic response.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .certify import CheckResult
from .expr import (
    BinOp,
    Expr,
    Var,
    compile_expr,
    diff_expr_numeric,
    eval_expr,
    free_vars,
    parse_expr,
    substitute,
    to_str,
)
from .integrate import IntegratorSettings
from .model import ClosedLoopModel, ModelError
from .order import OrderInterval, OrthantCone

_MIN_GRID = 10_000
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_POSITIVITY_EPS = 1e-10


@dataclass
class GeneSpec:
    """Parameters of a gene-regulation chain.

    alphas[0..n-2] must be constant positive expressions; alphas[n-1] may
    depend on t and must be positive over a full period.  g is a function
    of u with g(0) > 0 and nonincreasing slope sign (checked by sampling).
    """

    n: int
    alphas: Sequence[Expr]
    g: Expr
    tau: float


class GeneSpecError(ModelError):
    """A gene spec violates its structural requirements."""


def _golden_min(fun, lo: float, hi: float, iters: int = 90) -> tuple[float, float]:
    """Golden-section minimum of a unimodal-enough function on [lo, hi]."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fun(d)
    best = c if fc <= fd else d
    return best, min(fc, fd)


def _grid_refine_min(fun, lo: float, hi: float, grid_points: int) -> tuple[float, float]:
    """Dense-grid scan followed by golden-section refinement around the best cell."""
    us = np.linspace(lo, hi, grid_points)
    vals = np.array([fun(u) for u in us])
    k = int(np.argmin(vals))
    a = us[max(0, k - 1)]
    b = us[min(grid_points - 1, k + 1)]
    u_star, v_star = _golden_min(fun, a, b)
    if vals[k] < v_star:
        return float(us[k]), float(vals[k])
    return float(u_star), float(v_star)


@lru_cache(maxsize=256)
def periodic_min(e: Expr, tau: float, grid_points: int = _MIN_GRID) -> float:
    """Minimum of a scalar expression in t over one period."""
    fun = compile_expr(e, ("t",))
    return _grid_refine_min(fun, 0.0, tau, grid_points)[1]


def _alpha_values(spec: GeneSpec) -> tuple[list[float], float]:
    """Constant decay rates and the period-minimum of the forced one."""
    consts = [eval_expr(a, {}) for a in spec.alphas[:-1]]
    a_min = periodic_min(spec.alphas[-1], spec.tau)
    return consts, a_min


def validate_spec(spec: GeneSpec) -> None:
    """Raise GeneSpecError unless the spec meets its structural requirements."""
    if not isinstance(spec.n, int) or spec.n < 2:
        raise GeneSpecError(f"n must be an integer >= 2, got {spec.n!r}")
    if spec.tau <= 0:
        raise GeneSpecError(f"period must be positive, got {spec.tau}")
    if len(spec.alphas) != spec.n:
        raise GeneSpecError(f"expected {spec.n} decay rates, got {len(spec.alphas)}")
    for i, a in enumerate(spec.alphas[:-1]):
        if free_vars(a):
            raise GeneSpecError(
                f"alpha[{i}] must be constant, found variables {sorted(free_vars(a))}"
            )
        if not eval_expr(a, {}) > _POSITIVITY_EPS:
            raise GeneSpecError(f"alpha[{i}] = {to_str(a)} is not positive")
    extra = free_vars(spec.alphas[-1]) - {"t"}
    if extra:
        raise GeneSpecError(f"alpha[{spec.n - 1}] may only depend on t, found {sorted(extra)}")
    if not periodic_min(spec.alphas[-1], spec.tau) > _POSITIVITY_EPS:
        raise GeneSpecError(
            f"alpha[{spec.n - 1}] = {to_str(spec.alphas[-1])} is not positive over a period"
        )
    extra = free_vars(spec.g) - {"u"}
    if extra:
        raise GeneSpecError(f"g may only depend on u, found {sorted(extra)}")
    g0 = eval_expr(spec.g, {"u": 0.0})
    if not g0 > 0:
        raise GeneSpecError(f"g(0) = {g0} must be positive")
    consts, a_min = _alpha_values(spec)
    u_hi = g0 / (math.prod(consts) * a_min)
    for u in np.linspace(0.0, u_hi, 64):
        slope = diff_expr_numeric(spec.g, "u", {"u": float(u)})
        if slope > _POSITIVITY_EPS:
            raise GeneSpecError(f"g must be nonincreasing; g'({u}) = {slope:.3e} > 0")


def compute_box_X(spec: GeneSpec) -> OrderInterval:
    """Canonical invariant box: 0 up to the cumulative production bound.

    Coordinate i is capped by g(0) divided by the product of the first i
    decay rates, with the forced rate entering through its period minimum.
    """
    validate_spec(spec)
    g0 = eval_expr(spec.g, {"u": 0.0})
    consts, a_min = _alpha_values(spec)
    rates = consts + [a_min]
    hi = []
    acc = g0
    for rate in rates:
        acc = acc / rate
        hi.append(acc)
    return OrderInterval(OrthantCone.positive(spec.n), np.zeros(spec.n), hi)


def build_gene_model(spec: GeneSpec) -> ClosedLoopModel:
    """Closed-loop model of the chain, with its canonical box attached."""
    validate_spec(spec)
    n = spec.n
    f = [BinOp("-", Var("u1"), BinOp("*", spec.alphas[0], Var("x1")))]
    for i in range(1, n):
        f.append(BinOp("-", Var(f"x{i}"), BinOp("*", spec.alphas[i], Var(f"x{i + 1}"))))
    h = [substitute(spec.g, {"u": Var(f"x{n}")})]
    return ClosedLoopModel(
        n=n, m=1, tau=spec.tau,
        K=OrthantCone.positive(n), U_cone=OrthantCone.positive(1),
        f=f, h=h, X=compute_box_X(spec),
        settings=IntegratorSettings(max_step=spec.tau / 100),
    )


def check_H(spec: GeneSpec, grid_points: int = 2048) -> CheckResult:
    """Slope condition: steepest descent of g below the decay-rate product.

    Computes alpha = product of the rates (forced rate at its period
    minimum) and the maximum of -g' over the reachable input range
    [0, g(0)/alpha] by grid scan plus golden-section refinement.  Passing
    margin alpha - max(-g') > 0 is the sufficient condition under which
    the bracketing iteration is guaranteed to collapse.
    """
    validate_spec(spec)
    g0 = eval_expr(spec.g, {"u": 0.0})
    consts, a_min = _alpha_values(spec)
    alpha = math.prod(consts) * a_min
    u_hi = g0 / alpha

    slope = lambda u: diff_expr_numeric(spec.g, "u", {"u": float(u)})
    try:
        # the steepest descent of g is the (negated) minimum of g'
        _, min_slope = _grid_refine_min(slope, 0.0, u_hi, grid_points)
    except Exception as err:
        return CheckResult("H_slope_condition", "indeterminate", math.nan,
                           [{"error": str(err)}], grid_points, 0.0)
    max_neg_gprime = -min_slope
    margin = alpha - max_neg_gprime
    verdict = "pass" if margin > 0 else "fail"
    witnesses = [{"alpha": alpha, "max_neg_gprime": max_neg_gprime, "margin": margin}]
    return CheckResult(
        "H_slope_condition", verdict, margin, witnesses,
        samples_used=grid_points, eps=0.0,
        details={"alpha": alpha, "max_neg_gprime": max_neg_gprime,
                 "input_range": [0.0, u_hi]},
    )


def reference_spec() -> GeneSpec:
    """The bundled three-gene demo: two constant rates, one sinusoidally
    forced rate with period 5, and a hyperbolic production response."""
    return GeneSpec(
        n=3,
        alphas=[parse_expr("2"), parse_expr("1"),
                parse_expr("2 - 4/5*sin(2/5*pi*t)")],
        g=parse_expr("2/(1+u)"),
        tau=5.0,
    )


def spec_from_config(doc: dict) -> GeneSpec:
    """GeneSpec from an already schema-checked "gene" configuration document."""
    return GeneSpec(
        n=doc["n"],
        alphas=[parse_expr(a) for a in doc["alpha"]],
        g=parse_expr(doc["g"]),
        tau=float(doc["period"]),
    )


def reference_config() -> dict:
    """The demo model as a configuration document (load_model input)."""
    return {
        "type": "gene",
        "n": 3,
        "period": 5.0,
        "alpha": ["2", "1", "2 - 4/5*sin(2/5*pi*t)"],
        "g": "2/(1+u)",
    }
