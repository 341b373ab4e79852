"""Exact mean first-passage times of the aggregate chain.

The mean time ``u`` to reach an absorbing set A solves ``-Q u = 1`` off A
with ``u = 0`` on A, where Q is the generator on the (k_plus, k_minus)
lattice. The lattice has at most (N/2 + 1)^2 states for balanced fields, so
sparse LU handles every size used here; above ``DIRECT_LIMIT`` unknowns a
Jacobi-preconditioned BiCGSTAB takes over.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import solve_banded

from .errors import NumericalError, ValidationError
from .model import AggregateState, Environment, ModelParams, rate_arrays
from .simulator import ExitDisk

__all__ = [
    "FptProblem",
    "ScalingFit",
    "generator_matrix",
    "mean_exit_time_exact",
    "mean_absorption_time_exact",
    "mean_times_all",
    "voter_absorption_time",
    "birth_death_absorption_times",
    "scaling_fit",
]

MAX_STATES = 1_000_000
DIRECT_LIMIT = 200_000
RESIDUAL_TOL = 1e-9


@dataclass(frozen=True)
class FptProblem:
    """``exit_disk=None`` means absorption mode (target = the two consensus
    states). ``nominal_q`` swaps the quenched growth rates for nominal ones."""

    params: ModelParams
    env: Environment
    start: AggregateState
    exit_disk: ExitDisk | None = None
    nominal_q: bool = False

    @property
    def mode(self) -> str:
        return "absorption" if self.exit_disk is None else "exit"


def _lattice(params, env):
    n_states = (env.n_plus + 1) * (env.n_minus + 1)
    if n_states > MAX_STATES:
        raise ValidationError(f"state space of {n_states} states exceeds {MAX_STATES}")
    kp, km = np.meshgrid(np.arange(env.n_plus + 1), np.arange(env.n_minus + 1), indexing="ij")
    return kp.ravel(), km.ravel()


def _index(kp, km, env):
    return kp * (env.n_minus + 1) + km


def generator_matrix(params: ModelParams, env: Environment, nominal_q: bool = False) -> sp.csr_matrix:
    """Generator Q over the full lattice; state ``(a, b)`` has index
    ``a * (n_minus + 1) + b``."""
    kp, km = _lattice(params, env)
    r1, l1, r2, l2 = rate_arrays(kp, km, params.N, env.n_plus, params.rho,
                                 params.q if nominal_q else None)
    # nominal-q rates can point off the lattice or go negative; both mean "no move"
    r1 = np.where(kp < env.n_plus, np.maximum(r1, 0.0), 0.0)
    r2 = np.where(km < env.n_minus, np.maximum(r2, 0.0), 0.0)
    rates = (r1, l1, r2, l2)
    src = _index(kp, km, env)
    rows, cols, vals = [src], [src], [-(rates[0] + rates[1] + rates[2] + rates[3])]
    for (dp, dm), r in zip(((1, 0), (-1, 0), (0, 1), (0, -1)), rates):
        ok = r > 0
        rows.append(src[ok])
        cols.append(_index(kp[ok] + dp, km[ok] + dm, env))
        vals.append(r[ok])
    n = kp.size
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def _transient_mask(params, env, disk):
    kp, km = _lattice(params, env)
    K = kp + km
    mask = (K > 0) & (K < params.N)
    if disk is not None:
        mask &= disk.contains(kp, km, params.N)
    return mask


def _solve(A, b):
    n = A.shape[0]
    if n <= DIRECT_LIMIT:
        lu = spla.splu(A.tocsc())
        u = lu.solve(b)
        u += lu.solve(b - A @ u)  # one step of iterative refinement
    else:
        d = A.diagonal()
        M = spla.LinearOperator(A.shape, matvec=lambda v: v / d)
        u, info = spla.bicgstab(A, b, M=M, rtol=1e-13, atol=0.0, maxiter=50 * n)
        if info != 0:
            raise NumericalError(f"BiCGSTAB did not converge (info={info})")
    r = b - A @ u
    scale = spla.norm(A, np.inf) * np.abs(u).max() + np.abs(b).max()
    backward = np.abs(r).max() / scale
    if not np.all(np.isfinite(u)) or backward > RESIDUAL_TOL:
        raise NumericalError(f"linear solve residual {backward:.3e} above {RESIDUAL_TOL}")
    return u


def mean_times_all(params: ModelParams, env: Environment, exit_disk: ExitDisk | None = None,
                   nominal_q: bool = False):
    """Mean hitting time from every lattice state, shaped
    ``(n_plus + 1, n_minus + 1)``; zero on the target set."""
    mask = _transient_mask(params, env, exit_disk)
    u = np.zeros(mask.size)
    if mask.any():
        Q = generator_matrix(params, env, nominal_q)
        idx = np.flatnonzero(mask)
        A = -Q[idx][:, idx]
        u[idx] = _solve(A.tocsr(), np.ones(idx.size))
    return u.reshape(env.n_plus + 1, env.n_minus + 1)


def mean_exit_time_exact(problem: FptProblem) -> float:
    """Expected time for the chain started at ``problem.start`` to hit the
    target set: the complement of the exit disk, or the consensus states."""
    params, env, start = problem.params, problem.env, problem.start
    start.check(env)
    mask = _transient_mask(params, env, problem.exit_disk)
    s = _index(start.k_plus, start.k_minus, env)
    if not mask[s]:
        return 0.0
    return float(mean_times_all(params, env, problem.exit_disk, problem.nominal_q).ravel()[s])


def mean_absorption_time_exact(params: ModelParams, env: Environment, start: AggregateState) -> float:
    return mean_exit_time_exact(FptProblem(params, env, start))


def voter_absorption_time(N: int, k: int) -> float:
    """Mean consensus time of the plain voter chain (up and down rates both
    ``k (N - k) / N``) from ``k`` up-spins.

    The jump chain is a simple symmetric walk, whose expected number of
    visits to ``j`` from ``k`` is ``2 min(k, j) (N - max(k, j)) / N``; each
    visit lasts ``N / (2 j (N - j))`` on average.
    """
    if not 0 <= k <= N:
        raise ValidationError("k must lie in [0, N]")
    if k in (0, N):
        return 0.0
    j = np.arange(1, N, dtype=float)
    g = np.minimum(k, j) * (N - np.maximum(k, j))
    return float(np.sum(g / (j * (N - j))))


def birth_death_absorption_times(up, down) -> np.ndarray:
    """Mean absorption times of a birth-death chain on {0..n} absorbed at
    both ends, by a tridiagonal solve. ``up[k]``, ``down[k]`` are the rates
    out of state ``k`` (entries at 0 and n are ignored)."""
    up = np.asarray(up, dtype=float)
    down = np.asarray(down, dtype=float)
    n = up.size - 1
    lam, mu = up[1:n], down[1:n]
    ab = np.zeros((3, n - 1))
    ab[0, 1:] = -lam[:-1]
    ab[1] = lam + mu
    ab[2, :-1] = -mu[1:]
    T = np.zeros(n + 1)
    T[1:n] = solve_banded((1, 1), ab, np.ones(n - 1))
    return T


@dataclass
class ScalingFit:
    N: np.ndarray
    log_times: np.ndarray
    slope: float
    intercept: float
    residuals: np.ndarray
    r_squared: float

    @property
    def residual_norm(self) -> float:
        return float(np.linalg.norm(self.residuals))


def scaling_fit(N_list, times) -> ScalingFit:
    """Least-squares line through ``(N, log time)``; the slope estimates the
    exponential growth rate of the mean time."""
    N = np.asarray(N_list, dtype=float)
    t = np.asarray(times, dtype=float)
    if N.size < 4 or N.size != t.size:
        raise ValidationError("scaling fit needs at least 4 (N, time) pairs")
    if np.any(np.diff(N) <= 0):
        raise ValidationError("N values must be strictly increasing")
    if np.any(~(t > 0)) or not np.all(np.isfinite(t)):
        raise ValidationError("mean times must be positive and finite")
    y = np.log(t)
    X = np.column_stack([N, np.ones_like(N)])
    (slope, intercept), *_ = np.linalg.lstsq(X, y, rcond=None)
    res = y - (slope * N + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(res**2) / ss_tot if ss_tot > 0 else 1.0
    return ScalingFit(N, y, float(slope), float(intercept), res, float(r2))
