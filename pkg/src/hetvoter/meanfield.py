"""Deterministic large-N limit of the order parameters.

The flow is a quadratic vector field on the box [0, q] x [0, 1 - q]:

    dm+/dt = -rho m+ (1 - m+ - m-) + (q - m+)(m+ + m-)
    dm-/dt = -m- (1 - m+ - m-) + rho (1 - q - m-)(m+ + m-)
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateEquilibria, NumericalError, ValidationError
from .model import ModelParams, interior_equilibrium

__all__ = [
    "Trajectory",
    "Equilibrium",
    "drift",
    "jacobian",
    "integrate_ode",
    "equilibria",
    "is_admissible",
    "STABILITY_THRESHOLD",
]

BOX_TOL = 1e-12
STABILITY_THRESHOLD = 1e-10


def drift(x, params: ModelParams) -> np.ndarray:
    """Mean-field velocity at ``x``; works on arrays of shape (..., 2)."""
    x = np.asarray(x, dtype=float)
    mp, mm = x[..., 0], x[..., 1]
    rho, q = params.rho, params.q
    m = mp + mm
    return np.stack(
        [
            -rho * mp * (1.0 - m) + (q - mp) * m,
            -mm * (1.0 - m) + rho * (1.0 - q - mm) * m,
        ],
        axis=-1,
    )


def jacobian(x, params: ModelParams) -> np.ndarray:
    mp, mm = float(x[0]), float(x[1])
    rho, q = params.rho, params.q
    m = mp + mm
    return np.array(
        [
            [-rho * (1.0 - m) + rho * mp - m + (q - mp), rho * mp + (q - mp)],
            [mm + rho * (1.0 - q - mm), -(1.0 - m) + mm - rho * m + rho * (1.0 - q - mm)],
        ]
    )


def _in_box(x, q, tol) -> bool:
    return bool(-tol <= x[0] <= q + tol and -tol <= x[1] <= 1.0 - q + tol)


@dataclass
class Trajectory:
    times: np.ndarray
    points: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "m_plus", "m_minus"])
            for t, (a, b) in zip(self.times, self.points):
                w.writerow([repr(float(t)), repr(float(a)), repr(float(b))])


def _rk4(x, h, params):
    k1 = drift(x, params)
    k2 = drift(x + 0.5 * h * k1, params)
    k3 = drift(x + 0.5 * h * k2, params)
    k4 = drift(x + h * k3, params)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _advance(x, h, params, depth=0):
    y = _rk4(x, h, params)
    if not np.all(np.isfinite(y)):
        raise NumericalError("non-finite drift during ODE integration")
    if _in_box(y, params.q, 1e-9):
        return y
    if depth >= 30:
        raise NumericalError("step halving failed to keep the trajectory in the box")
    half = _advance(x, 0.5 * h, params, depth + 1)
    return _advance(half, 0.5 * h, params, depth + 1)


def integrate_ode(x0, params: ModelParams, horizon: float, step: float) -> Trajectory:
    """Fixed-step RK4 from ``x0`` up to ``horizon``, one record per step.

    A step that would leave the box by more than 1e-9 is redone as two half
    steps (recursively). The last step is shortened to land on ``horizon``.
    """
    if not horizon > 0 or not step > 0:
        raise ValidationError("horizon and step must be positive")
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (2,) or not _in_box(x, params.q, BOX_TOL):
        raise ValidationError(f"initial point {x0!r} outside [0, q] x [0, 1 - q]")
    n_full = int(np.floor(horizon / step + 1e-12))
    times = [0.0]
    points = [x.copy()]
    t = 0.0
    for i in range(n_full):
        x = _advance(x, step, params)
        t = (i + 1) * step
        times.append(t)
        points.append(x.copy())
    if horizon - t > 1e-12 * max(1.0, horizon):
        x = _advance(x, horizon - t, params)
        times.append(horizon)
        points.append(x.copy())
    pts = np.array(points)
    pts[:, 0] = np.clip(pts[:, 0], 0.0, params.q)
    pts[:, 1] = np.clip(pts[:, 1], 0.0, 1.0 - params.q)
    return Trajectory(np.array(times), pts)


@dataclass
class Equilibrium:
    location: tuple
    kind: str  # "all_ones" | "all_zeros" | "interior"
    eigenvalues: np.ndarray = field(repr=False)
    classification: str = ""

    def as_dict(self) -> dict:
        ev = [complex(e) for e in self.eigenvalues]
        return {
            "kind": self.kind,
            "location": [float(self.location[0]), float(self.location[1])],
            "eigenvalues": [[e.real, e.imag] for e in ev],
            "classification": self.classification,
        }


def is_admissible(params: ModelParams) -> bool:
    """Whether the coexistence point lies in the box: ``rho < (1 - q) / q``."""
    return params.rho < (1.0 - params.q) / params.q


def _classify(ev) -> str:
    return "stable" if np.all(np.real(ev) < -STABILITY_THRESHOLD) else "unstable"


def equilibria(params: ModelParams) -> list[Equilibrium]:
    """Fixed points of the flow with their Jacobian eigenvalues.

    Raises ``DegenerateEquilibria`` at ``rho = 1``, where every point with a
    given ``m+ + m-`` is stationary.
    """
    if params.rho >= 1.0:
        raise DegenerateEquilibria("rho = 1: the line m+ + m- = const is a continuum of equilibria")
    q = params.q
    out = []
    pts = [((q, 1.0 - q), "all_ones"), ((0.0, 0.0), "all_zeros")]
    if is_admissible(params):
        pts.append((interior_equilibrium(params.rho, q), "interior"))
    for loc, kind in pts:
        ev = np.linalg.eigvals(jacobian(loc, params))
        out.append(Equilibrium(loc, kind, ev, _classify(ev)))
    return out
