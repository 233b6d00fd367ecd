"""Adaptive explicit Runge-Kutta flow for model vector fields.

Implements the Dormand-Prince 5(4) embedded pair (the classic DOPRI5
tableau, FSAL exploited) with per-component error control: a step is
accepted when |err_i| <= atol + rtol * |x_i| for every component.  Target
times are hit exactly by clipping the final step, never by interpolation,
and sampling a grid continues one integration thread across all grid points.

References:
    Dormand & Prince, "A family of embedded Runge-Kutta formulae",
    J. Comp. Appl. Math. 6 (1980).
    Hairer, Norsett & Wanner, "Solving ODEs I", section II.4.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

Field = Callable[[float, np.ndarray], np.ndarray]

# Butcher tableau, 7 stages; row 7 of A equals the 5th-order weights, so the
# last stage of an accepted step is the first stage of the next (FSAL).
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = (
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
)
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# fifth-order weights minus the embedded fourth-order weights
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


class IntegrationError(RuntimeError):
    """Integration failure; carries the last good time and state."""

    def __init__(self, message: str, t: float, x: np.ndarray, stats: "IntegrationStats"):
        super().__init__(f"{message} (last good state at t={t!r})")
        self.t = t
        self.x = np.array(x)
        self.stats = stats


@dataclass(frozen=True)
class IntegratorSettings:
    """Error-control settings.

    max_step of None means uncapped; model constructors set it to a
    hundredth of the forcing period so the forcing is always resolved.
    """

    rtol: float = 1e-9
    atol: float = 1e-12
    max_step: float | None = None
    max_steps: int = 10_000_000

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("rtol and atol must be positive")
        if self.max_step is not None and self.max_step <= 0:
            raise ValueError("max_step must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")


@dataclass
class IntegrationStats:
    steps: int = 0
    rejections: int = 0
    rhs_evaluations: int = 0


@dataclass
class Trajectory:
    """States sampled along one continuous solution."""

    times: np.ndarray
    states: np.ndarray
    stats: IntegrationStats

    def __len__(self) -> int:
        return len(self.times)


def _error_ratio(err: np.ndarray, x: np.ndarray, x_new: np.ndarray, s: IntegratorSettings) -> float:
    scale = s.atol + s.rtol * np.maximum(np.abs(x), np.abs(x_new))
    return float(np.max(np.abs(err) / scale))


def _initial_step(field: Field, t0: float, x0: np.ndarray, f0: np.ndarray,
                  span: float, cap: float, s: IntegratorSettings,
                  stats: IntegrationStats) -> float:
    scale = s.atol + s.rtol * np.abs(x0)
    d0 = float(np.max(np.abs(x0) / scale))
    d1 = float(np.max(np.abs(f0) / scale))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, span, cap)
    f1 = field(t0 + h0, x0 + h0 * f0)
    stats.rhs_evaluations += 1
    if not np.all(np.isfinite(f1)):
        return min(h0 * 1e-3, span, cap)
    d2 = float(np.max(np.abs(f1 - f0) / scale)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span, cap)


def _integrate(field: Field, t0: float, x0: np.ndarray, targets: Sequence[float],
               s: IntegratorSettings):
    """Yield the state at each target time along one continuous solution."""
    t = float(t0)
    x = np.array(x0, dtype=float)
    dim = x.size
    stats = IntegrationStats()
    if not np.all(np.isfinite(x)):
        raise IntegrationError("non-finite initial state", t, x, stats)

    span = float(targets[-1]) - t
    cap = s.max_step if s.max_step is not None else max(span, 1e-3)
    k1 = None
    h = None
    K = np.empty((7, dim))

    for target in targets:
        target = float(target)
        while t < target:
            if k1 is None:
                k1 = field(t, x)
                stats.rhs_evaluations += 1
                if not np.all(np.isfinite(k1)):
                    raise IntegrationError("non-finite right-hand side", t, x, stats)
            if h is None:
                h = _initial_step(field, t, x, k1, span, cap, s, stats)

            h_exec = min(h, target - t)
            hit_target = h_exec >= target - t

            # finiteness is checked explicitly; keep numpy quiet while probing
            with np.errstate(over="ignore", invalid="ignore"):
                K[0] = k1
                failed = False
                for i in range(1, 7):
                    xi = x + h_exec * (_A[i] @ K[:i])
                    K[i] = field(t + _C[i] * h_exec, xi)
                    if not np.all(np.isfinite(K[i])):
                        failed = True
                        break
                stats.rhs_evaluations += i if failed else 6
                if not failed:
                    x_new = x + h_exec * (_B @ K)
                    err = h_exec * (_E @ K)
                    if np.all(np.isfinite(x_new)) and np.all(np.isfinite(err)):
                        ratio = _error_ratio(err, x, x_new, s)
                    else:
                        failed = True

            if failed or ratio > 1.0:
                stats.rejections += 1
                factor = _MIN_FACTOR if failed else max(
                    _MIN_FACTOR, min(1.0, _SAFETY * ratio ** -0.2)
                )
                h = h_exec * factor
                if h < 1e-14 * max(1.0, abs(t)):
                    raise IntegrationError("step size underflow (blow-up?)", t, x, stats)
            else:
                stats.steps += 1
                t = target if hit_target else t + h_exec
                x = x_new
                k1 = K[6].copy()  # FSAL: last stage sits at (t, x_new)
                factor = _MAX_FACTOR if ratio == 0.0 else min(
                    _MAX_FACTOR, max(_MIN_FACTOR, _SAFETY * ratio ** -0.2)
                )
                h = min(h_exec * factor, cap)

            if stats.steps + stats.rejections >= s.max_steps:
                raise IntegrationError("maximum step count exceeded", t, x, stats)
        yield t, x.copy(), stats


def flow(field: Field, t0: float, x0, t1: float,
         s: IntegratorSettings | None = None) -> tuple[np.ndarray, IntegrationStats]:
    """Solution at time t1 of x' = field(t, x) with x(t0) = x0.

    The final step is clipped so t1 is hit exactly.  Raises
    IntegrationError on blow-up or step-count exhaustion.
    """
    s = s or IntegratorSettings()
    x0 = np.asarray(x0, dtype=float)
    if t1 < t0:
        raise ValueError(f"t1={t1} must be >= t0={t0}")
    if t1 == t0:
        return x0.copy(), IntegrationStats()
    for _, x, stats in _integrate(field, t0, x0, [t1], s):
        pass
    return x, stats


def sample_trajectory(field: Field, t0: float, x0, grid,
                      s: IntegratorSettings | None = None) -> Trajectory:
    """States at every grid time, from a single continuous integration.

    Grid times must be strictly increasing with grid[0] >= t0; each grid
    point is landed on exactly (steps are clipped, not interpolated).
    """
    s = s or IntegratorSettings()
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a nonempty 1-d array of times")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid times must be strictly increasing")
    if grid[0] < t0:
        raise ValueError(f"grid starts at {grid[0]}, before t0={t0}")
    x0 = np.asarray(x0, dtype=float)

    states = np.empty((grid.size, x0.size))
    stats = IntegrationStats()
    if grid[-1] == t0:
        states[0] = x0
        return Trajectory(grid.copy(), states, stats)
    for row, (_, x, st) in zip(states, _integrate(field, t0, x0, grid, s)):
        row[:] = x
        stats = st
    return Trajectory(grid.copy(), states, stats)
