"""Gaussian fluctuations of the order parameters around the coexistence point.

At q = 1/2 the rescaled deviations ``sqrt(N) ((m+, m-) - z)`` approach the
linear SDE

    dX = (A X + c) dt + sigma dB,

with ``A`` the mean-field Jacobian at z, ``sigma^2 = rho / (2 (1 + rho))`` per
coordinate (independent noises) and a constant shift ``c = kappa H (1, -rho)``
coming from the quenched imbalance of the field. ``H`` is the standardised
field imbalance ``2 sqrt(N) (q_N - 1/2)``; with that normalisation the
microscopic chain fixes ``kappa = 1/4``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from . import kernels
from .errors import ValidationError
from .model import Environment, ModelParams, interior_equilibrium
from .rng import as_generator

__all__ = [
    "FORCING",
    "FluctuationParams",
    "FluctuationSeries",
    "quenched_H",
    "integrate_sde",
    "stationary_moments",
    "em_stationary_covariance",
    "moments_dict",
    "empirical_fluctuations",
]

FORCING = 0.25
_CHUNK = 1 << 16


@dataclass(frozen=True)
class FluctuationParams:
    """Coefficients of the limiting SDE.

    Parameters
    ----------
    rho : float
        Imitation probability across the field, in [0, 1].
    H : float
        Quenched field imbalance (standard normal over environments).
    forcing : float
        ``kappa`` in ``c = kappa H (1, -rho)``.
    noise : float, optional
        Override of the noise amplitude ``sigma``; ``None`` uses the
        model value.
    """

    rho: float
    H: float = 0.0
    forcing: float = FORCING
    noise: float | None = None

    def __post_init__(self):
        if not (0.0 <= self.rho <= 1.0) or not math.isfinite(self.rho):
            raise ValidationError(f"rho must lie in [0, 1], got {self.rho!r}")
        if not math.isfinite(self.H):
            raise ValidationError("H must be finite")
        if self.noise is not None and not self.noise >= 0:
            raise ValidationError("noise amplitude must be non-negative")

    @property
    def A(self) -> np.ndarray:
        r = self.rho
        a = (1.0 + r * r) / (2.0 * (1.0 + r))
        b = r / (1.0 + r)
        return np.array([[-a, b], [b, -a]])

    @property
    def sigma(self) -> float:
        if self.noise is not None:
            return float(self.noise)
        return math.sqrt(self.rho / (2.0 * (1.0 + self.rho)))

    @property
    def c(self) -> np.ndarray:
        k = self.forcing * self.H
        return np.array([k, -self.rho * k])

    @property
    def eigenvalues(self) -> np.ndarray:
        """``-(1 - rho)^2 / (2 (1 + rho))`` and ``-(1 + rho) / 2``."""
        r = self.rho
        return np.array([-(1.0 - r) ** 2 / (2.0 * (1.0 + r)), -(1.0 + r) / 2.0])


@dataclass
class FluctuationSeries:
    times: np.ndarray
    values: np.ndarray  # (n, 2): X, Y
    H: float
    seed: int | None = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "X", "Y"])
            for t, (x, y) in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(y))])


def quenched_H(env: Environment, params: ModelParams) -> float:
    """Standardised field imbalance ``2 sqrt(N) (q_N - 1/2)``."""
    if params.q != 0.5:
        raise ValidationError("the fluctuation limit is only available at q = 1/2")
    return 2.0 * math.sqrt(env.N) * (env.q_N - 0.5)


def integrate_sde(x0, fp: FluctuationParams, horizon: float, step: float,
                  seed) -> FluctuationSeries:
    """Euler-Maruyama path on the grid ``0, step, ..., horizon``.

    Parameters
    ----------
    x0 : array_like, shape (2,)
        Initial state.
    fp : FluctuationParams
    horizon, step : float
        Time span and step; ``step * (1 + rho) / 2 < 0.5`` is required.
    seed : int or numpy.random.Generator
        Source of the Gaussian increments.

    Returns
    -------
    FluctuationSeries
    """
    if not (step > 0 and math.isfinite(step)):
        raise ValidationError("step must be positive")
    if not (horizon >= 0 and math.isfinite(horizon)):
        raise ValidationError("horizon must be non-negative")
    lam = float(np.max(np.abs(fp.eigenvalues)))
    if step * lam >= 0.5:
        raise ValidationError(
            f"step {step} too large for stability: need step < {0.5 / lam:.6g}")
    x = np.array(x0, dtype=float).reshape(-1)
    if x.shape != (2,) or not np.all(np.isfinite(x)):
        raise ValidationError("x0 must be a finite 2-vector")
    rng = as_generator(seed)
    n = int(math.floor(horizon / step + 1e-9))
    out = np.empty((n + 1, 2))
    out[0] = x
    A, c = np.ascontiguousarray(fp.A), fp.c
    done = 0
    while done < n:
        k = min(_CHUNK, n - done)
        noise = rng.standard_normal((k, 2))
        kernels.ou_euler(x, A, c, fp.sigma, step, noise, out[done + 1:done + 1 + k])
        done += k
    times = np.arange(n + 1) * step
    return FluctuationSeries(times, out, fp.H, None if isinstance(seed, np.random.Generator) else int(seed))


def stationary_moments(fp: FluctuationParams) -> tuple[np.ndarray, np.ndarray]:
    """Stationary mean ``-A^{-1} c`` and covariance ``-(sigma^2 / 2) A^{-1}``.

    The covariance solves ``A S + S A' + sigma^2 I = 0``; the closed form
    uses that ``A`` is symmetric.
    """
    if not 0.0 < fp.rho < 1.0:
        raise ValidationError("stationary law needs 0 < rho < 1 "
                              "(A is singular at rho = 1, the noise vanishes at rho = 0)")
    Ainv = np.linalg.inv(fp.A)
    mean = -Ainv @ fp.c
    cov = -0.5 * fp.sigma ** 2 * Ainv
    return mean, 0.5 * (cov + cov.T)


def em_stationary_covariance(fp: FluctuationParams, step: float) -> np.ndarray:
    """Exact stationary covariance of the Euler-Maruyama recursion itself."""
    F = np.eye(2) + step * fp.A
    return solve_discrete_lyapunov(F, step * fp.sigma ** 2 * np.eye(2))


def moments_dict(fp: FluctuationParams) -> dict:
    mean, cov = stationary_moments(fp)
    return {"mean": mean.tolist(), "cov": cov.tolist(), "H": float(fp.H)}


def empirical_fluctuations(path, params: ModelParams, env: Environment, dt: float = 0.1,
                           t_start: float = 0.0, t_end: float | None = None) -> FluctuationSeries:
    """``sqrt(N) ((m+, m-)(t) - z)`` of a simulated path on a uniform grid.

    Parameters
    ----------
    path : SampledPath
    params : ModelParams
        Needs ``q = 1/2`` and ``rho < 1``.
    env : Environment
        The environment the path was run in (gives ``H``).
    dt : float
        Grid spacing.
    t_start, t_end : float
        Analysis window; ``t_end`` defaults to the path's end time.
    """
    if params.q != 0.5:
        raise ValidationError("the fluctuation limit is only available at q = 1/2")
    if not params.rho < 1.0:
        raise ValidationError("no interior equilibrium at rho = 1")
    if not dt > 0:
        raise ValidationError("dt must be positive")
    t_end = path.end_time if t_end is None else t_end
    if not 0.0 <= t_start <= t_end:
        raise ValidationError("need 0 <= t_start <= t_end")
    if path.absorbed and path.absorption_time < t_end:
        raise ValidationError(
            f"path absorbed at t = {path.absorption_time:.6g}, before the window ends")
    if t_end > path.end_time + 1e-12:
        raise ValidationError("window extends past the simulated horizon")
    n0 = int(math.ceil(t_start / dt - 1e-9))
    n1 = int(math.floor(t_end / dt + 1e-9))
    grid = np.arange(n0, n1 + 1) * dt
    kp, km = path.state_at(grid)
    z = np.array(interior_equilibrium(params.rho, params.q))
    vals = math.sqrt(params.N) * (np.column_stack([kp, km]) / params.N - z)
    return FluctuationSeries(grid, vals, quenched_H(env, params))
