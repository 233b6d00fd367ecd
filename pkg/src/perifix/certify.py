"""Runtime hypothesis checks and the monotone bracketing iteration.

The checks probe, at seeded low-discrepancy sample points, the differential
form of the structural hypotheses a closed-loop negative-feedback system
must satisfy:

  A1  the open-loop field is quasimonotone (Kamke) in x for frozen input;
  A2  the open-loop field is increasing in the input;
  A3  the output map is decreasing;
  bracket displacement  one period of the doubled flow moves the corner
      (x0, y0) up and the corner (y0, x0) down in the product-cone order;
  box invariance  the field points weakly inward on every face of a box.

When the displacement test passes, iterating the doubled period map from
the two corners produces monotone chains squeezing every orbit in between;
a collapsed gap certifies convergence of the original system to a single
harmonic periodic solution on the bracketed box, and the diagonal midpoint
of the limit is that solution's initial value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import sampling
from .expr import central_diff
from .integrate import IntegratorSettings
from .model import ClosedLoopModel, DoubledModel
from .order import OrderInterval, cmp_leq, order_margin
from .poincare import doubled_map, poincare_map

JACOBIAN_EPS = 1e-7
INVARIANCE_EPS = 1e-8
CHAIN_EPS = 1e-8
_MAX_WITNESSES = 5


class CertificationError(RuntimeError):
    """A certification step that must hold numerically failed to."""


@dataclass
class CheckResult:
    """Verdict of one sampled hypothesis check.

    worst_margin is signed slack: the checked quantity is required to stay
    >= 0, the verdict is pass iff worst_margin >= -eps.  Entries that are
    numerically zero (|entry| <= eps) never decide the margin; math.inf
    marks a vacuous check with nothing to test.  Witnesses record the
    sample points achieving the worst margins and are reproducible from
    the recorded seed.
    """

    name: str
    verdict: str  # "pass" | "fail" | "indeterminate"
    worst_margin: float
    witnesses: list[dict]
    samples_used: int
    eps: float
    seed: int | None = None
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "verdict": self.verdict,
            "worst_margin": self.worst_margin,
            "eps": self.eps,
            "samples_used": self.samples_used,
            "seed": self.seed,
            "witnesses": self.witnesses,
            "details": self.details,
        }


def _finish(name: str, margins: list[tuple[float, dict]], samples: int,
            eps: float, seed: int | None, details: dict | None = None) -> CheckResult:
    """Fold margin records into a CheckResult (see margin convention above)."""
    margins.sort(key=lambda rec: rec[0])
    significant = [rec for rec in margins if abs(rec[0]) > eps]
    if not margins:
        worst = math.inf
        witnesses = []
    elif significant:
        worst = significant[0][0]
        witnesses = [rec[1] for rec in significant[:_MAX_WITNESSES]]
    else:
        worst = 0.0
        witnesses = [rec[1] for rec in margins[:_MAX_WITNESSES]]
    verdict = "pass" if worst >= -eps else "fail"
    return CheckResult(name, verdict, worst, witnesses, samples, eps, seed,
                       details or {})


def _indeterminate(name: str, err: Exception, witness: dict, samples: int,
                   eps: float, seed: int | None) -> CheckResult:
    witness = dict(witness, error=str(err))
    return CheckResult(name, "indeterminate", math.nan, [witness], samples, eps, seed)


def input_box(mdl: ClosedLoopModel, samples: int = 128, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Componentwise range of the feedback output over the state box.

    Serves as the sampling box for the input space: these are the only
    input values the closed loop ever produces.
    """
    lo, hi = mdl.X.geometric_bounds()
    pts = np.vstack([sampling.box_points(samples, lo, hi, seed=seed), lo, hi])
    outs = np.array([mdl.output(x) for x in pts])
    return outs.min(axis=0), outs.max(axis=0)


def _jacobian_check(name: str, mdl: ClosedLoopModel, samples: int, seed: int,
                    entry_margins: Callable[[float, np.ndarray, np.ndarray], list[tuple[str, float]]]) -> CheckResult:
    """Shared sampling loop for the differential hypothesis checks."""
    lo, hi = mdl.X.geometric_bounds()
    xs = sampling.box_points(samples, lo, hi, seed=seed)
    ts = sampling.unit_points(samples, 1, seed=seed + 1)[:, 0] * mdl.tau
    try:
        ulo, uhi = input_box(mdl, seed=seed + 2)
    except Exception as err:
        return _indeterminate(name, err, {"stage": "input range"}, 0,
                              JACOBIAN_EPS, seed)
    us = sampling.box_points(samples, ulo, uhi, seed=seed + 3)

    margins: list[tuple[float, dict]] = []
    for t, x, u in zip(ts, xs, us):
        point = {"t": float(t), "x": x.tolist(), "u": u.tolist()}
        try:
            for label, margin in entry_margins(t, x, u):
                margins.append((margin, dict(point, entry=label, margin=margin)))
        except Exception as err:  # evaluation failure at this sample
            return _indeterminate(name, err, point, samples, JACOBIAN_EPS, seed)
    return _finish(name, margins, samples, JACOBIAN_EPS, seed)


def check_A1_quasimonotone(mdl: ClosedLoopModel, samples: int = 256,
                           seed: int = 0) -> CheckResult:
    """Kamke condition for the open-loop field with input frozen.

    For orthant cones quasimonotonicity reduces to sign-adjusted
    off-diagonal entries of the x-Jacobian of f being nonnegative.
    Vacuously true (worst_margin = inf) for one-dimensional state.
    """
    ks = mdl.K.signs

    def entries(t, x, u):
        out = []
        for j in range(mdl.n):
            col = central_diff(
                lambda *a: mdl.open_loop_rhs(a[0], a[1:mdl.n + 1], a[mdl.n + 1:]),
                [t, *x, *u], 1 + j)
            for i in range(mdl.n):
                if i != j:
                    out.append((f"df{i + 1}/dx{j + 1}", ks[i] * ks[j] * float(col[i])))
        return out

    return _jacobian_check("A1_quasimonotone", mdl, samples, seed, entries)


def check_A2_input_monotone(mdl: ClosedLoopModel, samples: int = 256,
                            seed: int = 0) -> CheckResult:
    """Monotone dependence of the open-loop field on the input.

    Sign-adjusted entries of df/du must be nonnegative (sufficient
    differential form of input monotonicity).
    """
    ks, us_ = mdl.K.signs, mdl.U_cone.signs

    def entries(t, x, u):
        out = []
        for j in range(mdl.m):
            col = central_diff(
                lambda *a: mdl.open_loop_rhs(a[0], a[1:mdl.n + 1], a[mdl.n + 1:]),
                [t, *x, *u], 1 + mdl.n + j)
            for i in range(mdl.n):
                out.append((f"df{i + 1}/du{j + 1}", ks[i] * us_[j] * float(col[i])))
        return out

    return _jacobian_check("A2_input_monotone", mdl, samples, seed, entries)


def check_A3_output_decreasing(mdl: ClosedLoopModel, samples: int = 256,
                               seed: int = 0) -> CheckResult:
    """Decreasing output map: sign-adjusted entries of dh/dx must be <= 0."""
    ks, us_ = mdl.K.signs, mdl.U_cone.signs

    def entries(t, x, u):
        out = []
        for i in range(mdl.n):
            col = central_diff(lambda *a: mdl.output(a), x, i)
            for j in range(mdl.m):
                out.append((f"dh{j + 1}/dx{i + 1}", -us_[j] * ks[i] * float(col[j])))
        return out

    return _jacobian_check("A3_output_decreasing", mdl, samples, seed, entries)


def verify_box_invariance(mdl: ClosedLoopModel, box: OrderInterval,
                          time_samples: int = 16, face_samples: int = 32,
                          seed: int = 0) -> CheckResult:
    """Check that the closed-loop field points weakly inward on every face.

    On the order-upper face of coordinate i the sign-adjusted component
    signs_i * F_i must be <= eps, on the order-lower face >= -eps, sampled
    at seeded points on each face (face corners included) over one period.
    """
    n = box.dim
    ks = box.cone.signs
    glo, ghi = box.geometric_bounds()
    times = sampling.unit_points(time_samples, 1, seed=seed)[:, 0] * mdl.tau

    margins: list[tuple[float, dict]] = []
    samples_used = 0
    for i in range(n):
        others = [j for j in range(n) if j != i]
        if others:
            pts = sampling.box_points(face_samples, glo[others], ghi[others],
                                      seed=seed + 1 + i)
            if len(others) <= 10:  # face corners catch extremes sampling may miss
                corners = np.array(np.meshgrid(
                    *[[glo[j], ghi[j]] for j in others], indexing="ij"
                )).reshape(len(others), -1).T
                pts = np.vstack([pts, corners])
        else:
            pts = [np.empty(0)]
        for face, value, orient in (("upper", box.hi[i], -1.0), ("lower", box.lo[i], 1.0)):
            for partial in pts:
                x = np.empty(n)
                x[others] = partial
                x[i] = value
                for t in times:
                    samples_used += 1
                    try:
                        Fi = float(mdl.field(t, x)[i])
                    except Exception as err:
                        return _indeterminate(
                            "box_invariance", err,
                            {"t": float(t), "x": x.tolist()},
                            samples_used, INVARIANCE_EPS, seed)
                    margin = orient * ks[i] * Fi
                    margins.append((margin, {
                        "t": float(t), "x": x.tolist(), "face": f"{face}[{i + 1}]",
                        "margin": margin,
                    }))

    margins.sort(key=lambda rec: rec[0])
    worst = margins[0][0] if margins else math.inf
    verdict = "pass" if worst >= -INVARIANCE_EPS else "fail"
    witnesses = [rec[1] for rec in margins[:_MAX_WITNESSES]]
    return CheckResult("box_invariance", verdict, worst, witnesses,
                       samples_used, INVARIANCE_EPS, seed)


def check_bracket_condition(dm: DoubledModel, x0, y0,
                            s: IntegratorSettings | None = None) -> CheckResult:
    """Displacement test for the bracketing corners.

    Integrating the doubled system one period from (x0, y0) must move the
    point up in the product-cone order; equivalently the x-block average
    drift is >= 0 and the y-block average drift is <= 0.
    """
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    if not cmp_leq(dm.base.K, x0, y0):
        raise ValueError("corner precondition failed: x0 <= y0 does not hold")
    a0 = np.concatenate([x0, y0])
    moved = doubled_map(dm, a0, s)
    eps = 1e-8 * (1.0 + float(np.max(np.abs(y0))))
    adj = dm.C.signs_vec * (moved - a0)
    order = np.argsort(adj)
    witnesses = [
        {"component": int(k), "margin": float(adj[k])}
        for k in order[:_MAX_WITNESSES]
    ]
    worst = float(adj[order[0]])
    verdict = "pass" if worst >= -eps else "fail"
    return CheckResult("bracket_displacement", verdict, worst, witnesses,
                       samples_used=1, eps=eps,
                       details={"displacement": (moved - a0).tolist()})


@dataclass
class ConvergenceCertificate:
    """Outcome of the monotone bracketing iteration.

    The a-chain rises from the corner (x0, y0) and the b-chain falls from
    (y0, x0); both are monotone in the product-cone order and squeeze all
    orbits started in between.  status is "converged" when the sup-norm gap
    between the chains fell below tol; then p and q are the chain limits,
    r is the diagonal midpoint of p's two blocks, and fixed_point_residual
    is the independently measured |T(r) - r|.
    """

    status: str  # "converged" | "max_iters" | "bracket_violated"
    p: np.ndarray
    q: np.ndarray
    gap: float
    iterations: int
    chain_log: list[dict]
    r: np.ndarray | None = None
    fixed_point_residual: float | None = None
    violation: dict | None = None

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "gap": self.gap,
            "p": self.p.tolist(),
            "q": self.q.tolist(),
            "r": None if self.r is None else self.r.tolist(),
            "fixed_point_residual": self.fixed_point_residual,
            "chain_log": self.chain_log,
            "violation": self.violation,
        }


def bracket_converge(dm: DoubledModel, x0, y0, tol: float = 1e-6,
                     residual_tol: float = 1e-8, max_iters: int = 500,
                     s: IntegratorSettings | None = None) -> ConvergenceCertificate:
    """Run the monotone bracketing iteration of the doubled period map.

    Each iteration applies the doubled map to both chains and asserts the
    sandwich a_k <= a_{k+1} <= b_{k+1} <= b_k in the product-cone order
    (slack CHAIN_EPS); a violation beyond slack means the hypotheses fail
    or the integration tolerances are too loose, and is reported as status
    "bracket_violated" rather than silently iterated past.

    On convergence the diagonal midpoint r of the limit is verified to be
    a fixed point of the base period map within residual_tol; failure of
    that verification raises CertificationError.
    """
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    if not cmp_leq(dm.base.K, x0, y0):
        raise ValueError("corner precondition failed: x0 <= y0 does not hold")
    n = dm.base.n

    a = np.concatenate([x0, y0])
    b = np.concatenate([y0, x0])
    gap = float(np.max(np.abs(a - b)))
    chain_log = [{"iteration": 0, "gap": gap}]

    iterations = 0
    while gap >= tol and iterations < max_iters:
        iterations += 1
        a_next = doubled_map(dm, a, s)
        b_next = doubled_map(dm, b, s)
        step_a = order_margin(dm.C, a, a_next)
        between = order_margin(dm.C, a_next, b_next)
        step_b = order_margin(dm.C, b_next, b)
        gap = float(np.max(np.abs(a_next - b_next)))
        chain_log.append({
            "iteration": iterations, "gap": gap,
            "margin_a_step": step_a, "margin_between": between,
            "margin_b_step": step_b,
        })
        if min(step_a, between, step_b) < -CHAIN_EPS:
            return ConvergenceCertificate(
                status="bracket_violated", p=a_next, q=b_next, gap=gap,
                iterations=iterations, chain_log=chain_log,
                violation=chain_log[-1],
            )
        a, b = a_next, b_next

    if gap >= tol:
        return ConvergenceCertificate(
            status="max_iters", p=a, q=b, gap=gap,
            iterations=iterations, chain_log=chain_log,
        )

    r = 0.5 * (a[:n] + a[n:])
    residual = float(np.max(np.abs(poincare_map(dm.base, r, s) - r)))
    if residual >= residual_tol:
        raise CertificationError(
            f"brackets collapsed (gap {gap:.3e}) but the midpoint misses the "
            f"fixed point: |T(r) - r| = {residual:.3e} >= {residual_tol:.3e}"
        )
    return ConvergenceCertificate(
        status="converged", p=a, q=b, gap=gap, iterations=iterations,
        chain_log=chain_log, r=r, fixed_point_residual=residual,
    )
