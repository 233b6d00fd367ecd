"""Closed-loop model construction, configuration ingestion, and structure checks.

A closed-loop model is  x' = f(t, x, u) with the feedback  u = h(x), so the
induced field is F(t, x) = f(t, x, h(x)).  The doubled model unfolds the
feedback across two copies of the state,

    x' = f(t, x, h(y)),   y' = f(t, y, h(x)),

which restricts to (F, F) on the diagonal and is monotone for the product
cone K x (-K).  Components are declared as expression strings over the
variables t, x1..xn, u1..um (see perifix.expr for the grammar).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import sampling
from .expr import (
    EvalError,
    Expr,
    ParseError,
    central_diff,
    compile_expr,
    diff_expr_numeric,
    eval_expr,
    free_vars,
    parse_expr,
    to_str,
)
from .integrate import IntegratorSettings
from .order import OrderInterval, OrthantCone, product_cone

__all__ = [
    "ClosedLoopModel",
    "DoubledModel",
    "FeedbackSignature",
    "ModelError",
    "build_doubled",
    "classify_cyclic",
    "eval_closed_loop_field",
    "load_model",
    "parse_expr",
    "eval_expr",
    "diff_expr_numeric",
]

# |Jacobian entry| below this is treated as structurally absent, above it the
# entry's sign must be consistent across samples to count as determinate.
COUPLING_THRESHOLD = 1e-7

_PERIODICITY_SAMPLES = 32
_PERIODICITY_TOL = 1e-10


class ModelError(ValueError):
    """Configuration or validation failure, with the offending field path."""


def _pyfloats(v) -> list[float]:
    # compiled expressions expect Python floats: numpy scalars have different
    # power semantics (nan instead of a complex result to reject)
    return v.tolist() if isinstance(v, np.ndarray) else [float(a) for a in v]


def _x_names(n: int) -> tuple[str, ...]:
    return tuple(f"x{i + 1}" for i in range(n))


def _u_names(m: int) -> tuple[str, ...]:
    return tuple(f"u{j + 1}" for j in range(m))


class ClosedLoopModel:
    """Validated time-periodic closed-loop system on a box.

    Attributes:
        n, m: state and input dimensions.
        tau: forcing period of the right-hand side.
        K, U_cone: orthant cones ordering the state and input spaces.
        f: n expressions over (t, x1..xn, u1..um).
        h: m output expressions over (x1..xn).
        X: state box (order interval for K).
        settings: integrator defaults; max_step is tau/100 unless overridden.
    """

    def __init__(self, n: int, m: int, tau: float, K: OrthantCone,
                 U_cone: OrthantCone, f: Sequence[Expr], h: Sequence[Expr],
                 X: OrderInterval, settings: IntegratorSettings | None = None):
        if n < 1 or m < 1:
            raise ModelError(f"dimensions must be positive, got n={n}, m={m}")
        if tau <= 0:
            raise ModelError(f"period must be positive, got {tau}")
        if K.dim != n:
            raise ModelError(f"cone has dimension {K.dim}, expected n={n}")
        if U_cone.dim != m:
            raise ModelError(f"input cone has dimension {U_cone.dim}, expected m={m}")
        if len(f) != n:
            raise ModelError(f"f has {len(f)} components, expected n={n}")
        if len(h) != m:
            raise ModelError(f"h has {len(h)} components, expected m={m}")
        if X.dim != n or X.cone != K:
            raise ModelError("state box must live in the model's state cone")

        self.n = n
        self.m = m
        self.tau = float(tau)
        self.K = K
        self.U_cone = U_cone
        self.f = tuple(f)
        self.h = tuple(h)
        self.X = X
        self.settings = settings or IntegratorSettings(max_step=self.tau / 100)

        xn, un = _x_names(n), _u_names(m)
        allowed_f = {"t", *xn, *un}
        for i, e in enumerate(self.f):
            extra = free_vars(e) - allowed_f
            if extra:
                raise ModelError(f"f[{i}] references unknown variables {sorted(extra)}")
        for j, e in enumerate(self.h):
            extra = free_vars(e) - set(xn)
            if extra:
                raise ModelError(f"h[{j}] references unknown variables {sorted(extra)}")

        self._f_funcs = [compile_expr(e, ("t", *xn, *un)) for e in self.f]
        self._h_funcs = [compile_expr(e, xn) for e in self.h]
        self._check_periodicity()

    def output(self, x) -> np.ndarray:
        """Feedback output h(x)."""
        xt = _pyfloats(x)
        return np.array([hf(*xt) for hf in self._h_funcs])

    def open_loop_rhs(self, t: float, x, u) -> np.ndarray:
        """f(t, x, u) with the input held external."""
        args = [float(t), *_pyfloats(x), *_pyfloats(u)]
        return np.array([ff(*args) for ff in self._f_funcs])

    def field(self, t: float, x) -> np.ndarray:
        """Closed-loop field F(t, x) = f(t, x, h(x))."""
        xt = _pyfloats(x)
        u = [hf(*xt) for hf in self._h_funcs]
        args = [float(t), *xt, *u]
        return np.array([ff(*args) for ff in self._f_funcs])

    def _check_periodicity(self) -> None:
        lo, hi = self.X.geometric_bounds()
        pts = sampling.box_points(_PERIODICITY_SAMPLES, lo, hi, seed=0)
        times = sampling.unit_points(_PERIODICITY_SAMPLES, 1, seed=1)[:, 0] * self.tau
        for t, x in zip(times, pts):
            try:
                defect = float(np.max(np.abs(self.field(t, x) - self.field(t + self.tau, x))))
            except ArithmeticError as err:
                raise ModelError(
                    f"field evaluation failed inside the state box at "
                    f"t={t!r}, x={x.tolist()}: {err}"
                ) from err
            if not defect < _PERIODICITY_TOL:
                raise ModelError(
                    f"right-hand side is not {self.tau}-periodic: "
                    f"|F(t,x) - F(t+tau,x)| = {defect:.3e} at t={t!r}, x={x.tolist()}"
                )

    def __repr__(self) -> str:
        fs = ", ".join(to_str(e) for e in self.f)
        return f"ClosedLoopModel(n={self.n}, m={self.m}, tau={self.tau}, f=[{fs}])"


class DoubledModel:
    """Symmetric doubling of a closed-loop model on the squared state space."""

    def __init__(self, base: ClosedLoopModel):
        self.base = base
        self.C = product_cone(base.K)
        # corners (lo, hi) and (hi, lo) of the base box, ordered for C
        self.I = OrderInterval(
            self.C,
            np.concatenate([base.X.lo, base.X.hi]),
            np.concatenate([base.X.hi, base.X.lo]),
        )
        self._n = base.n

    @property
    def dim(self) -> int:
        return 2 * self._n

    def field(self, t: float, z) -> np.ndarray:
        """G(t, (x, y)) = (f(t, x, h(y)), f(t, y, h(x)))."""
        n = self._n
        zt = _pyfloats(z)
        x, y = zt[:n], zt[n:]
        t = float(t)
        base = self.base
        ux = [hf(*y) for hf in base._h_funcs]
        uy = [hf(*x) for hf in base._h_funcs]
        out = [ff(t, *x, *ux) for ff in base._f_funcs]
        out += [ff(t, *y, *uy) for ff in base._f_funcs]
        return np.array(out)


def eval_closed_loop_field(mdl: ClosedLoopModel, t: float, x) -> np.ndarray:
    """F(t, x) = f(t, x, h(x)); h is evaluated first, then fed into f."""
    xv = np.asarray(x, dtype=float)
    if xv.shape != (mdl.n,):
        raise ValueError(f"x has shape {xv.shape}, expected ({mdl.n},)")
    return mdl.field(t, xv)


def build_doubled(mdl: ClosedLoopModel) -> DoubledModel:
    """Doubled symmetric system with cone K x (-K) and the doubled box."""
    return DoubledModel(mdl)


@dataclass(frozen=True)
class FeedbackSignature:
    """Interaction signs of a cyclic chain.

    deltas[i] is the sampled sign of dF_i/dx_{i-1} (predecessor of x_1 is
    x_n); 0 marks an indeterminate coupling.  delta is the product when all
    couplings are determinate, None otherwise; -1 means negative feedback.
    """

    deltas: tuple[int, ...]
    delta: int | None


def classify_cyclic(mdl: ClosedLoopModel, samples: int = 64, seed: int = 0) -> FeedbackSignature:
    """Detect the cyclic coupling signs of the closed-loop field.

    Probes the full Jacobian of F by central differences at low-discrepancy
    (t, x) points.  Any coupling outside the chain pattern (each F_i driven
    by x_i and its predecessor only) raises ModelError.
    """
    n = mdl.n
    lo, hi = mdl.X.geometric_bounds()
    pts = sampling.box_points(samples, lo, hi, seed=seed)
    times = sampling.unit_points(samples, 1, seed=seed + 1)[:, 0] * mdl.tau

    pred = [(i - 1) % n for i in range(n)]
    chain_vals = [[] for _ in range(n)]
    for t, x in zip(times, pts):
        for j in range(n):
            col = central_diff(lambda *a: mdl.field(t, np.array(a)), x, j)
            for i in range(n):
                if j == pred[i]:
                    chain_vals[i].append(col[i])
                elif j != i and abs(col[i]) > COUPLING_THRESHOLD:
                    raise ModelError(
                        f"non-cyclic coupling: dF{i + 1}/dx{j + 1} = {col[i]:.3e} "
                        f"at t={t!r}, x={x.tolist()}"
                    )

    deltas = []
    for vals in chain_vals:
        arr = np.array(vals)
        if np.all(arr > COUPLING_THRESHOLD):
            deltas.append(1)
        elif np.all(arr < -COUPLING_THRESHOLD):
            deltas.append(-1)
        else:
            deltas.append(0)
    delta = None
    if all(d != 0 for d in deltas):
        delta = int(np.prod(deltas))
    return FeedbackSignature(tuple(deltas), delta)


# ---------------------------------------------------------------------------
# configuration documents
# ---------------------------------------------------------------------------

_COMMON_KEYS = {"type", "n", "m", "period", "state_box", "cone"}
_KEYS_BY_TYPE = {
    "closed_loop": _COMMON_KEYS | {"f", "h"},
    "gene": _COMMON_KEYS | {"alpha", "g"},
}


def _require(doc: Mapping, key: str):
    if key not in doc:
        raise ModelError(f"missing required key {key!r}")
    return doc[key]


def _as_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ModelError(f"{path}: expected an integer, got {value!r}")
    return value


def _as_real(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ModelError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _parse_field(text, path: str) -> Expr:
    if not isinstance(text, str):
        raise ModelError(f"{path}: expected an expression string, got {text!r}")
    try:
        return parse_expr(text)
    except ParseError as err:
        raise ModelError(f"{path}: {err}") from err


def _expr_list(value, count: int, path: str) -> list[Expr]:
    if not isinstance(value, list) or len(value) != count:
        got = len(value) if isinstance(value, list) else type(value).__name__
        raise ModelError(f"{path}: expected a list of {count} expression strings, got {got}")
    return [_parse_field(item, f"{path}[{i}]") for i, item in enumerate(value)]


def _cone_from(doc: Mapping, n: int) -> OrthantCone:
    if "cone" not in doc:
        return OrthantCone.positive(n)
    raw = doc["cone"]
    if not isinstance(raw, list) or len(raw) != n:
        raise ModelError(f"cone: expected a list of {n} signs")
    if any(isinstance(s, bool) or s not in (1, -1) for s in raw):
        raise ModelError(f"cone: entries must be +1 or -1, got {raw}")
    return OrthantCone(tuple(raw))


def _box_from(doc: Mapping, K: OrthantCone, n: int) -> OrderInterval | None:
    if "state_box" not in doc:
        return None
    raw = doc["state_box"]
    if not isinstance(raw, Mapping) or set(raw) != {"lo", "hi"}:
        raise ModelError('state_box: expected an object with keys "lo" and "hi"')
    lo = [_as_real(v, f"state_box.lo[{i}]") for i, v in enumerate(raw["lo"])]
    hi = [_as_real(v, f"state_box.hi[{i}]") for i, v in enumerate(raw["hi"])]
    if len(lo) != n or len(hi) != n:
        raise ModelError(f"state_box: lo and hi must have length n={n}")
    try:
        return OrderInterval(K, lo, hi)
    except ValueError as err:
        raise ModelError(f"state_box: {err}") from err


def load_model(doc: Mapping) -> ClosedLoopModel:
    """Build a validated model from a configuration document (parsed JSON).

    Rejects unknown keys; reports schema and expression errors with the
    offending field path; spot-checks that the induced field really is
    periodic with the declared period.
    """
    if not isinstance(doc, Mapping):
        raise ModelError(f"configuration must be an object, got {type(doc).__name__}")
    kind = _require(doc, "type")
    if kind not in _KEYS_BY_TYPE:
        raise ModelError(f'type: expected "closed_loop" or "gene", got {kind!r}')
    unknown = set(doc) - _KEYS_BY_TYPE[kind]
    if unknown:
        raise ModelError(f"unknown keys for type {kind!r}: {sorted(unknown)}")

    n = _as_int(_require(doc, "n"), "n")
    if n < 1:
        raise ModelError(f"n: must be at least 1, got {n}")
    m = _as_int(doc.get("m", 1), "m")
    tau = _as_real(_require(doc, "period"), "period")
    if tau <= 0:
        raise ModelError(f"period: must be positive, got {tau}")
    K = _cone_from(doc, n)
    box = _box_from(doc, K, n)

    if kind == "gene":
        from . import genereg  # cycle: genereg builds ClosedLoopModel instances

        if m != 1:
            raise ModelError(f"m: gene models have a scalar input, got m={m}")
        if K.signs != (1,) * n:
            raise ModelError("cone: gene models live in the nonnegative orthant")
        spec = genereg.GeneSpec(
            n=n,
            alphas=_expr_list(_require(doc, "alpha"), n, "alpha"),
            g=_parse_field(_require(doc, "g"), "g"),
            tau=tau,
        )
        mdl = genereg.build_gene_model(spec)
        if box is not None:
            return ClosedLoopModel(n, 1, tau, K, mdl.U_cone, mdl.f, mdl.h, box,
                                   mdl.settings)
        return mdl

    f = _expr_list(_require(doc, "f"), n, "f")
    h = _expr_list(_require(doc, "h"), m, "h")
    if box is None:
        raise ModelError("missing required key 'state_box'")
    U_cone = OrthantCone.positive(m)
    return ClosedLoopModel(n, m, tau, K, U_cone, f, h, box)
