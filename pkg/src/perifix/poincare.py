"""Period maps, orbit iteration, and periodic-solution extraction.

The period map T sends x to the solution one forcing period later,
T(x) = psi(tau, 0, x); its doubled counterpart does the same for the
symmetric system.  Fixed points of T are exactly the initial values of
harmonic (period-tau) solutions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .integrate import IntegratorSettings, Trajectory, flow, sample_trajectory
from .model import ClosedLoopModel, DoubledModel
from .order import in_interval


class OutsideBoxWarning(UserWarning):
    """Initial condition lies outside the model's state box."""


class PeriodicityError(RuntimeError):
    """A supposedly periodic solution failed to close up."""


@dataclass
class Orbit:
    """Period-map iterates x, Tx, T^2 x, ... from one continuous integration.

    residuals[k] = sup-norm of points[k+1] - points[k]; a decreasing tail is
    the desk-scale signature of convergence to a fixed point.
    """

    points: np.ndarray
    residuals: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    def tail_diameter(self) -> float:
        """Sup-norm diameter of the last max(5, n/10) iterates.

        Diagnostic for the limit set: near zero when the orbit has settled
        onto a single fixed point.
        """
        n = len(self.points) - 1
        tail = self.points[-max(5, n // 10):]
        spread = tail.max(axis=0) - tail.min(axis=0)
        return float(np.max(spread)) if len(tail) else 0.0


def poincare_map(mdl: ClosedLoopModel, x, s: IntegratorSettings | None = None) -> np.ndarray:
    """One application of the period map, T(x) = psi(tau, 0, x)."""
    x = np.asarray(x, dtype=float)
    if not in_interval(mdl.X, x, eps=1e-9):
        warnings.warn(
            f"initial point {x.tolist()} is outside the model box; "
            "invariance guarantees do not apply",
            OutsideBoxWarning,
            stacklevel=2,
        )
    out, _ = flow(mdl.field, 0.0, x, mdl.tau, s or mdl.settings)
    return out


def doubled_map(dm: DoubledModel, z, s: IntegratorSettings | None = None) -> np.ndarray:
    """Period map of the doubled symmetric system."""
    z = np.asarray(z, dtype=float)
    if z.shape != (dm.dim,):
        raise ValueError(f"z has shape {z.shape}, expected ({dm.dim},)")
    out, _ = flow(dm.field, 0.0, z, dm.base.tau, s or dm.base.settings)
    return out


def iterate_orbit(mdl: ClosedLoopModel, x, n: int,
                  s: IntegratorSettings | None = None) -> Orbit:
    """n period-map iterates, integrated continuously over [0, n*tau].

    Sampling one solution at period multiples is exact composition without
    the per-restart error accumulation of applying the map n times.
    """
    if n < 0:
        raise ValueError("iterate count must be nonnegative")
    x = np.asarray(x, dtype=float)
    if n == 0:
        return Orbit(points=x[None, :].copy(), residuals=np.empty(0))
    grid = mdl.tau * np.arange(n + 1)
    traj = sample_trajectory(mdl.field, 0.0, x, grid, s or mdl.settings)
    residuals = np.max(np.abs(np.diff(traj.states, axis=0)), axis=1)
    return Orbit(points=traj.states, residuals=residuals)


def periodic_solution(mdl: ClosedLoopModel, r, samples_per_period: int,
                      s: IntegratorSettings | None = None,
                      residual_bound: float = 1e-8) -> Trajectory:
    """Sample the periodic solution through the fixed point r over one period.

    r must satisfy |T(r) - r| below residual_bound (in sup norm); the
    sampled loop is required to close within 10x that bound, otherwise
    PeriodicityError reports the defect.
    """
    if samples_per_period < 1:
        raise ValueError("samples_per_period must be positive")
    r = np.asarray(r, dtype=float)
    grid = np.linspace(0.0, mdl.tau, samples_per_period + 1)
    traj = sample_trajectory(mdl.field, 0.0, r, grid, s or mdl.settings)
    defect = float(np.max(np.abs(traj.states[-1] - r)))
    if defect > 10 * residual_bound:
        raise PeriodicityError(
            f"solution through {r.tolist()} does not close up over one period: "
            f"defect {defect:.3e} exceeds {10 * residual_bound:.3e}"
        )
    return traj
