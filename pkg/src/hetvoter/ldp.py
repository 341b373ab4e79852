r"""Large deviations of the order parameters: Hamiltonian, Lagrangian,
discrete action and the quasi-potential.

The jump rates per unit N at x = (m+, m-) are

    l1 = rho x (1-x-y)      r1 = (q-x)(x+y)
    l2 = y (1-x-y)          r2 = rho (1-q-y)(x+y)

and each coordinate contributes a Poisson-type cost

    Lt(l, r; beta) = beta log((beta + s) / (2 r)) - s + l + r,  s = sqrt(beta^2 + 4 r l).

The quasi-potential is minimised over piecewise-linear paths from the stable
point to a target, with one free duration per segment (log-parametrised) and
a midpoint rule per segment. Gradients are analytic: by the envelope theorem
dLt/dbeta = alpha*, dLt/dr = 1 - e^alpha*, dLt/dl = 1 - e^-alpha*, and the
duration derivative of tau Lt(beta / tau) is -H at the optimal momentum.
"""
from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_continuous_lyapunov
from scipy.optimize import minimize

from .errors import ValidationError
from .meanfield import drift, integrate_ode, is_admissible, jacobian
from .model import ModelParams, interior_equilibrium
from . import kernels
from .rng import RESTART, generator

__all__ = [
    "ldp_rates",
    "hamiltonian",
    "lagrangian_1d",
    "lagrangian",
    "TimedPath",
    "path_action",
    "path_action_grad",
    "QPotOptions",
    "QuasiPotentialResult",
    "BoundaryResult",
    "quasi_potential",
    "boundary_min",
    "local_quadratic_form",
    "optimal_durations",
    "reduced_action",
    "stable_point",
]

ALPHA_MAX = 700.0


def _check_params(params: ModelParams):
    if params.rho >= 1.0 or not is_admissible(params):
        raise ValidationError("quasi-potential needs rho < (1 - q) / q (a stable interior point)")
    if params.q != 0.5:
        warnings.warn("quasi-potential for q != 1/2 is experimental", stacklevel=3)


def stable_point(params: ModelParams) -> np.ndarray:
    return np.array(interior_equilibrium(params.rho, params.q))


def ldp_rates(x, params: ModelParams):
    """``(l1, r1, l2, r2)`` at points ``x`` of shape (..., 2), nominal q."""
    x = np.asarray(x, dtype=float)
    a, b = x[..., 0], x[..., 1]
    rho, q = params.rho, params.q
    m = a + b
    return rho * a * (1.0 - m), (q - a) * m, b * (1.0 - m), rho * (1.0 - q - b) * m


def _rate_grads(x, params):
    a, b = x[..., 0], x[..., 1]
    rho, q = params.rho, params.q
    m = a + b
    dl1 = (rho * (1.0 - m) - rho * a, -rho * a)
    dr1 = ((q - a) - m, q - a)
    dl2 = (-b, (1.0 - m) - b)
    dr2 = (rho * (1.0 - q - b), rho * (1.0 - q - b) - rho * m)
    return dl1, dr1, dl2, dr2


def hamiltonian(x, alpha, params: ModelParams):
    """``sum_i r_i (e^alpha_i - 1) + l_i (e^-alpha_i - 1)``."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(np.abs(alpha) > ALPHA_MAX):
        raise ValueError(f"|alpha| must not exceed {ALPHA_MAX}")
    l1, r1, l2, r2 = ldp_rates(x, params)
    a1, a2 = alpha[..., 0], alpha[..., 1]
    return r1 * np.expm1(a1) + l1 * np.expm1(-a1) + r2 * np.expm1(a2) + l2 * np.expm1(-a2)


def _optimal_momentum(l, r, beta):
    """``(alpha, e^alpha, e^-alpha, s)`` for strictly positive ``l``, ``r``."""
    s = np.sqrt(beta * beta + 4.0 * r * l)
    pos = beta >= 0
    # each branch avoids the cancellation in beta + s or s - beta
    up = np.where(pos, (beta + s) / (2.0 * r), 2.0 * l / (s - beta))
    down = np.where(pos, 2.0 * r / (beta + s), (s - beta) / (2.0 * l))
    alpha = np.where(pos, np.log(up), -np.log(down))
    return alpha, up, down, s


def lagrangian_1d(l, r, beta):
    """Legendre transform of ``alpha -> r (e^alpha - 1) + l (e^-alpha - 1)``.

    Infinite exactly when ``l = 0, beta < 0`` or ``r = 0, beta > 0``.
    """
    l, r, beta = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (l, r, beta)))
    out = np.empty(beta.shape)
    both = (l > 0) & (r > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = _optimal_momentum(l[both], r[both], beta[both])[0]
        out[both] = kernels._cost_np(l[both], r[both], beta[both], alpha)
        # one-sided Poisson cost: only the moves with positive rate are possible
        only_r = (l == 0) & (r > 0)
        only_l = (r == 0) & (l > 0)
        none = (l == 0) & (r == 0)
        for mask, rate, sign in ((only_r, r, 1.0), (only_l, l, -1.0)):
            b = sign * beta[mask]
            k = rate[mask]
            val = np.where(b > 0, b * np.log(b / k) - b + k, np.where(b == 0, k, np.inf))
            out[mask] = val
        out[none] = np.where(beta[none] == 0, 0.0, np.inf)
    return out if out.ndim else float(out)


def lagrangian(x, beta, params: ModelParams):
    """Cost of moving at velocity ``beta`` from ``x``; zero iff ``beta`` is the drift."""
    beta = np.asarray(beta, dtype=float)
    l1, r1, l2, r2 = ldp_rates(x, params)
    return lagrangian_1d(l1, r1, beta[..., 0]) + lagrangian_1d(l2, r2, beta[..., 1])


@dataclass
class TimedPath:
    points: np.ndarray  # (M + 1, 2)
    durations: np.ndarray  # (M,)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.durations = np.asarray(self.durations, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValidationError("points must have shape (M + 1, 2)")
        if self.durations.shape != (self.points.shape[0] - 1,):
            raise ValidationError("need one duration per segment")
        if np.any(~(self.durations > 0)):
            raise ValidationError("segment durations must be positive")

    @property
    def M(self) -> int:
        return self.durations.size

    @property
    def total_time(self) -> float:
        return float(self.durations.sum())

    @property
    def start_times(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.durations)[:-1]])

    def reversed(self) -> "TimedPath":
        return TimedPath(self.points[::-1].copy(), self.durations[::-1].copy())

    def to_csv(self, path) -> None:
        """One row per vertex; the last vertex has segment index ``M``."""
        t0 = np.concatenate([[0.0], np.cumsum(self.durations)])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["segment", "t_start", "m_plus", "m_minus"])
            for k, (t, p) in enumerate(zip(t0, self.points)):
                w.writerow([k, repr(float(t)), repr(float(p[0])), repr(float(p[1]))])


def path_action(path: TimedPath, params: ModelParams) -> float:
    """Midpoint-rule action: ``sum_k tau_k L(mid_k, d_k / tau_k)``."""
    P, tau = path.points, path.durations
    mid = 0.5 * (P[1:] + P[:-1])
    vel = (P[1:] - P[:-1]) / tau[:, None]
    seg = tau * lagrangian(mid, vel, params)
    return float(np.sum(seg))


def path_action_grad(points, durations, params: ModelParams):
    """Action with its gradient in the vertices and in the durations.

    Requires all rates strictly positive at the segment midpoints.
    """
    P = np.asarray(points, dtype=float)
    tau = np.asarray(durations, dtype=float)
    mid = 0.5 * (P[1:] + P[:-1])
    d = P[1:] - P[:-1]
    beta = d / tau[:, None]
    l1, r1, l2, r2 = ldp_rates(mid, params)
    a1, e1, f1, _ = _optimal_momentum(l1, r1, beta[:, 0])
    a2, e2, f2, _ = _optimal_momentum(l2, r2, beta[:, 1])
    L = kernels._cost_np(l1, r1, beta[:, 0], a1) + kernels._cost_np(l2, r2, beta[:, 1], a2)
    S = float(np.sum(tau * L))

    g_d = np.column_stack([a1, a2])
    g_tau = L - beta[:, 0] * a1 - beta[:, 1] * a2
    dl1, dr1, dl2, dr2 = _rate_grads(mid, params)
    c_l1, c_r1, c_l2, c_r2 = 1.0 - f1, 1.0 - e1, 1.0 - f2, 1.0 - e2
    g_mid = np.column_stack([
        c_l1 * dl1[0] + c_r1 * dr1[0] + c_l2 * dl2[0] + c_r2 * dr2[0],
        c_l1 * dl1[1] + c_r1 * dr1[1] + c_l2 * dl2[1] + c_r2 * dr2[1],
    ]) * tau[:, None]
    g_P = np.zeros_like(P)
    g_P[:-1] += 0.5 * g_mid - g_d
    g_P[1:] += 0.5 * g_mid + g_d
    return S, g_P, g_tau


@dataclass(frozen=True)
class QPotOptions:
    M: int = 200
    tol: float = 1e-5
    max_iter: int = 1500
    rounds: int = 6
    spacing_weight: float = 1e-6
    restarts: int = 3
    margin: float = 1e-6
    perturbation: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.M < 2:
            raise ValidationError("need at least 2 path segments")
        if not self.tol > 0:
            raise ValidationError("tol must be positive")
        if not 0 <= self.restarts <= 3:
            raise ValidationError("restarts must be between 0 and 3")


@dataclass
class QuasiPotentialResult:
    value: float
    path: TimedPath
    converged: bool
    gradient_norm: float
    restarts_used: int
    target: np.ndarray

    def as_dict(self) -> dict:
        return {
            "target": [float(v) for v in self.target],
            "value": float(self.value),
            "converged": bool(self.converged),
            "gradient_norm": float(self.gradient_norm),
            "restarts_used": int(self.restarts_used),
            "M": int(self.path.M),
            "total_time": self.path.total_time,
        }


def optimal_durations(points, params: ModelParams) -> np.ndarray:
    """Segment durations minimising the action of the polygon ``points``.

    Each segment's cost ``tau L(mid, d / tau)`` is convex in ``tau`` and is
    minimised independently (zero-energy condition ``H = 0``).
    """
    P = np.ascontiguousarray(points, dtype=float)
    s = np.zeros(P.shape[0] - 1)
    kernels.reduced_action(P, params.rho, params.q, s.copy(), np.zeros_like(P), s)
    return np.exp(s)


def reduced_action(points, params: ModelParams):
    """Action of the polygon ``points`` with optimal durations, and its
    gradient in the vertices."""
    P = np.ascontiguousarray(points, dtype=float)
    s = np.zeros(P.shape[0] - 1)
    g = np.zeros_like(P)
    S = kernels.reduced_action(P, params.rho, params.q, s.copy(), g, s)
    return S, g


def _resample_by_arclength(P, M):
    seg = np.linalg.norm(np.diff(P, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0:
        return np.repeat(P[:1], M + 1, axis=0)
    u = np.linspace(0.0, s[-1], M + 1)
    return np.column_stack([np.interp(u, s, P[:, 0]), np.interp(u, s, P[:, 1])])


def _straight_start(z, target, M):
    t = np.linspace(0.0, 1.0, M + 1)[:, None]
    return z + t * (target - z)


def _reversed_flow_start(z, target, params, M):
    """Forward mean-field orbit from ``target`` towards ``z``, reversed."""
    gap = np.linalg.norm(target - z)
    traj = integrate_ode(target, params, horizon=60.0 / max(params.rho * (1 - params.rho), 1e-3) ** 0.5,
                         step=0.01)
    pts = traj.points
    close = np.flatnonzero(np.linalg.norm(pts - z, axis=1) < 1e-3 * gap)
    if close.size:
        pts = pts[: close[0] + 1]
    pts = np.vstack([pts, z])[::-1]
    return _resample_by_arclength(pts, M)


def _clip_interior(P, params, margin):
    out = P.copy()
    out[1:-1, 0] = np.clip(out[1:-1, 0], margin, params.q - margin)
    out[1:-1, 1] = np.clip(out[1:-1, 1], margin, 1.0 - params.q - margin)
    return out


ARCS = 8


def _spacing_penalty(P, weight):
    """``weight * sum_k (len_k / mean_len - 1)^2`` and its vertex gradient.

    Keeps vertices from merging: with free vertices the midpoint rule
    rewards a few long segments, which underestimates the action.
    """
    d = np.diff(P, axis=0)
    seg = np.sqrt(np.sum(d * d, axis=1))
    M = seg.size
    mean = seg.sum() / M
    if weight == 0.0 or mean == 0.0:
        return 0.0, np.zeros_like(P)
    u = seg / mean - 1.0
    E = weight * float(np.sum(u * u))
    dE = (2.0 * weight / mean) * (u - np.sum(u * (u + 1.0)) / M)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(seg[:, None] > 0, d / seg[:, None], 0.0)
    g = np.zeros_like(P)
    g[1:] += dE[:, None] * unit
    g[:-1] -= dE[:, None] * unit
    return E, g


def _optimize(P0, params, opts):
    """Minimise the duration-optimised action over the interior vertices.

    L-BFGS-B runs until the vertex gradient drops below ``opts.tol`` or the
    evaluation budget is spent; between rounds the vertices are respaced by
    arclength, which removes the slow sliding of points along the path.
    """
    M = P0.shape[0] - 1
    m = opts.margin
    lo = np.tile([m, m], M - 1)
    hi = np.tile([params.q - m, 1.0 - params.q - m], M - 1)
    P = np.ascontiguousarray(_clip_interior(P0, params, m))
    grad = np.zeros_like(P)
    s_cur = np.zeros(M)
    s_guess = np.log(np.maximum(optimal_durations(P, params), 1e-300))

    def fun(theta):
        P[1:-1] = theta.reshape(M - 1, 2)
        S = kernels.reduced_action(P, params.rho, params.q, s_guess, grad, s_cur)
        s_guess[:] = s_cur
        E, gE = _spacing_penalty(P, opts.spacing_weight)
        return S + E, (grad + gE)[1:-1].ravel()

    budget = opts.max_iter
    best = None
    for _ in range(opts.rounds):
        res = minimize(
            fun, P[1:-1].ravel().copy(), jac=True, method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
            options={"maxiter": budget, "maxfun": budget, "ftol": 1e-15,
                     "gtol": 0.1 * opts.tol, "maxcor": 20},
        )
        budget -= res.nfev
        _, g = fun(res.x)
        S = kernels.reduced_action(P, params.rho, params.q, s_guess, grad, s_cur)
        # projected gradient: components pushing into an active bound do not count
        x = res.x
        pg = np.where(((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0)), 0.0, g)
        gnorm = float(np.max(np.abs(pg)))
        if best is None or S <= best[0]:
            best = (S, P.copy(), s_cur.copy(), gnorm)
        if gnorm <= opts.tol or budget <= 0:
            break
        P[:] = _resample_by_arclength(P, M)
    S, Pb, s, gnorm = best
    return S, TimedPath(Pb, np.exp(s)), gnorm


def _perturb(path, params, rng, scale, margin):
    P = path.points.copy()
    M = P.shape[0] - 1
    s = np.linspace(0.0, 1.0, M + 1)
    gap = np.linalg.norm(P[-1] - P[0])
    bump = np.zeros_like(P)
    for k in range(1, 4):
        bump += np.outer(np.sin(k * np.pi * s), rng.normal(size=2)) / k
    P = P + scale * gap * bump
    return _clip_interior(P, params, margin)


def _shift_to(path_points, target):
    """Warm start: move the end of a neighbouring path onto ``target``."""
    P = np.array(path_points, dtype=float)
    seg = np.linalg.norm(np.diff(P, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    w = s / s[-1] if s[-1] > 0 else np.linspace(0, 1, len(P))
    return P + np.outer(w, np.asarray(target) - P[-1])


def _pick(cands, tol):
    """Lowest action, preferring a converged run that ties it up to rounding."""
    lowest = min(c[0] for c in cands)
    slack = 1e-7 * abs(lowest) + 1e-14
    tied = [c for c in cands if c[0] <= lowest + slack and c[2] <= tol]
    return min(tied, key=lambda c: c[0]) if tied else min(cands, key=lambda c: c[0])


def quasi_potential(target, params: ModelParams, opts: QPotOptions | None = None,
                    warm_start=None) -> QuasiPotentialResult:
    """Minimal action of a path from the stable point to ``target``.

    Runs from a straight line and from the reversed mean-field orbit (plus
    ``warm_start`` vertices if given), keeps the best, and adds up to
    ``opts.restarts`` randomised restarts while the best run has not
    converged.
    """
    opts = QPotOptions() if opts is None else opts
    _check_params(params)
    target = np.asarray(target, dtype=float)
    q = params.q
    if target.shape != (2,) or not (0 <= target[0] <= q and 0 <= target[1] <= 1 - q):
        raise ValidationError(f"target {target!r} outside [0, q] x [0, 1 - q]")
    z = stable_point(params)
    M = opts.M
    if np.linalg.norm(target - z) < 1e-14:
        P = np.repeat(z[None, :], M + 1, axis=0)
        return QuasiPotentialResult(0.0, TimedPath(P, np.ones(M)), True, 0.0, 0, target)
    m = opts.margin
    if not (m <= target[0] <= q - m and m <= target[1] <= 1 - q - m):
        raise ValidationError("target must keep the margin from the box faces")

    starts = [_straight_start(z, target, M), _reversed_flow_start(z, target, params, M)]
    if warm_start is not None:
        starts.append(_resample_by_arclength(_shift_to(warm_start, target), M))
    cands = [_optimize(P0, params, opts) for P0 in starts]
    best = _pick(cands, opts.tol)
    used = 0
    rng = generator(opts.seed, RESTART, 0)
    while best[2] > opts.tol and used < opts.restarts:
        P0 = _perturb(best[1], params, rng, opts.perturbation, m)
        cands.append(_optimize(P0, params, opts))
        used += 1
        best = _pick(cands, opts.tol)
    S, path, gnorm = best
    return QuasiPotentialResult(max(S, 0.0), path, gnorm <= opts.tol, gnorm, used, target)


@dataclass
class BoundaryResult:
    value: float
    argmin: np.ndarray
    angles: np.ndarray
    values: np.ndarray
    results: list

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["angle", "V"])
            for a, v in zip(self.angles, self.values):
                w.writerow([repr(float(a)), repr(float(v))])

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.results)


def _check_inward(center, radius, params, n):
    ang = 2.0 * np.pi * np.arange(n) / n
    normal = np.column_stack([np.cos(ang), np.sin(ang)])
    pts = np.asarray(center) + radius * normal
    q = params.q
    inside = (pts[:, 0] > 0) & (pts[:, 0] < q) & (pts[:, 1] > 0) & (pts[:, 1] < 1 - q)
    if not inside.all():
        k = int(np.flatnonzero(~inside)[0])
        raise ValidationError(f"boundary point {pts[k].tolist()} not inside the open box")
    flux = np.sum(drift(pts, params) * normal, axis=1)
    if np.any(flux >= 0):
        k = int(np.flatnonzero(flux >= 0)[0])
        raise ValidationError(
            f"drift not pointing inward at boundary point {pts[k].tolist()} (normal flux {flux[k]:.3e})"
        )
    return ang, pts


def boundary_min(center, radius: float, params: ModelParams, opts: QPotOptions | None = None,
                 n: int = 64, warm_start: bool = True, threads: int = 1) -> BoundaryResult:
    """Minimum of the quasi-potential over the circle ``|x - center| = radius``.

    With ``warm_start`` the circle is cut into ``ARCS`` contiguous arcs; along
    each arc every point is seeded by its neighbour's minimiser. Arcs (or,
    without warm starts, single points) run on ``threads`` workers, and the
    split does not depend on ``threads``, so neither do the results.
    """
    opts = QPotOptions() if opts is None else opts
    _check_params(params)
    if not radius > 0:
        raise ValidationError("radius must be positive")
    ang, pts = _check_inward(center, radius, params, n)

    def chain(idx):
        out, prev = [], None
        for i in idx:
            r = quasi_potential(pts[i], params, opts, warm_start=prev if warm_start else None)
            out.append(r)
            prev = r.path.points
        return out

    groups = np.array_split(np.arange(n), min(ARCS, n) if warm_start else n)
    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        results = [r for part in pool.map(chain, groups) for r in part]
    values = np.array([r.value for r in results])
    k = int(np.argmin(values))
    return BoundaryResult(float(values[k]), pts[k].copy(), ang, values, results)


def local_quadratic_form(params: ModelParams) -> np.ndarray:
    """Inverse stationary covariance of the linearised dynamics at the stable
    point, i.e. the Hessian of the Gaussian approximation ``V ~ dx' C dx / 2``.

    Solves ``J S + S J' + D = 0`` with ``J`` the drift Jacobian and ``D`` the
    diagonal of ``r_i + l_i``.
    """
    z = stable_point(params)
    J = jacobian(z, params)
    l1, r1, l2, r2 = ldp_rates(z, params)
    D = np.diag([r1 + l1, r2 + l2])
    S = solve_continuous_lyapunov(J, -D)
    return np.linalg.inv(S)
