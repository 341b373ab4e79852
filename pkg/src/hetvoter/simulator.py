"""Exact stochastic simulation of the finite-N chain.

The production path simulates the aggregate (k_plus, k_minus) chain with the
Gillespie algorithm: O(1) work per event regardless of N. The per-site
simulator follows the microscopic update rule literally and exists to
cross-check the aggregate one.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import ValidationError
from .model import AggregateState, Environment, ModelParams, default_start, sample_environment
from .rng import DYNAMICS, REPLICA_ENV, as_generator, derive_seed, generator

__all__ = [
    "ExitDisk",
    "SampledPath",
    "HittingTime",
    "BatchSummary",
    "simulate",
    "simulate_full_spin",
    "initial_spins",
    "absorption_time",
    "batch",
]

_FIRST_CHUNK = 4096
_MAX_CHUNK = 1 << 20
_FULL_SPIN_MAX_N = 10_000


@dataclass(frozen=True)
class ExitDisk:
    """Open disk in the (m+, m-) plane; leaving it ends an exit-mode run."""

    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValidationError("exit disk radius must be positive")

    def contains(self, k_plus, k_minus, N) -> np.ndarray:
        dx = np.asarray(k_plus) / N - self.center[0]
        dy = np.asarray(k_minus) / N - self.center[1]
        return dx * dx + dy * dy < self.radius * self.radius


@dataclass
class SampledPath:
    """Event times and states of one run; ``times[0]`` is the start."""

    times: np.ndarray
    k_plus: np.ndarray
    k_minus: np.ndarray
    N: int
    absorbed: bool
    exited: bool = False
    end_time: float = 0.0
    absorption_time: float | None = None

    @property
    def censored(self) -> bool:
        return not (self.absorbed or self.exited)

    def state_at(self, t) -> tuple[np.ndarray, np.ndarray]:
        """States in force at times ``t`` (right-continuous)."""
        t = np.asarray(t, dtype=float)
        if np.any(t > self.end_time + 1e-12) and not (self.absorbed or self.exited):
            raise ValueError("requested times beyond the simulated horizon")
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.k_plus[idx], self.k_minus[idx]

    def resample(self, dt: float, t_end: float | None = None):
        t_end = self.end_time if t_end is None else t_end
        grid = np.arange(int(np.floor(t_end / dt + 1e-9)) + 1) * dt
        kp, km = self.state_at(grid)
        return grid, kp, km

    def order_parameters(self) -> np.ndarray:
        return np.column_stack([self.k_plus, self.k_minus]) / self.N

    def to_csv(self, path, dt: float | None = None) -> None:
        if dt is None:
            t, kp, km = self.times, self.k_plus, self.k_minus
        else:
            t, kp, km = self.resample(dt)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "k_plus", "k_minus"])
            for row in zip(t, kp, km):
                w.writerow([repr(float(row[0])), int(row[1]), int(row[2])])


class HittingTime(NamedTuple):
    time: float
    censored: bool


def _disk_args(disk: ExitDisk | None):
    if disk is None:
        return 0.0, 0.0, -1.0
    return float(disk.center[0]), float(disk.center[1]), float(disk.radius) ** 2


def _run_aggregate(params, env, x0, horizon, rng, record, disk):
    x0.check(env)
    if not horizon > 0:
        raise ValidationError("horizon must be positive")
    N = params.N
    state = np.array([x0.k_plus, x0.k_minus], dtype=np.int64)
    times, kps, kms = [np.zeros(1)], [state[:1].copy()], [state[1:].copy()]
    if x0.is_absorbed(env):
        return SampledPath(times[0], kps[0], kms[0], N, True, False, 0.0, 0.0)
    if disk is not None and not disk.contains(x0.k_plus, x0.k_minus, N):
        return SampledPath(times[0], kps[0], kms[0], N, False, True, 0.0, 0.0)
    cx, cy, r2 = _disk_args(disk)
    dummy_f = np.zeros(1)
    dummy_i = np.zeros(1, dtype=np.int64)
    t = 0.0
    size = _FIRST_CHUNK
    while True:
        exps = rng.standard_exponential(size)
        unis = rng.random(size)
        if record:
            ev_t, ev_kp, ev_km = np.empty(size), np.empty(size, np.int64), np.empty(size, np.int64)
        else:
            ev_t, ev_kp, ev_km = dummy_f, dummy_i, dummy_i
        t, n, status = kernels.ssa_chunk(
            state, t, N, env.n_plus, params.rho, float(horizon), exps, unis,
            cx, cy, r2, record, ev_t, ev_kp, ev_km,
        )
        if record and n:
            times.append(ev_t[:n])
            kps.append(ev_kp[:n])
            kms.append(ev_km[:n])
        if status != kernels.RUNNING:
            break
        size = min(2 * size, _MAX_CHUNK)
    if not record:
        times.append(np.array([t]))
        kps.append(state[:1].copy())
        kms.append(state[1:].copy())
    absorbed = status == kernels.ABSORBED
    exited = status == kernels.EXITED or (absorbed and disk is not None)
    hit = t if (absorbed or exited) else None
    return SampledPath(
        np.concatenate(times), np.concatenate(kps), np.concatenate(kms),
        N, absorbed, exited, t, hit,
    )


def simulate(params: ModelParams, env: Environment, x0: AggregateState, horizon: float,
             seed=None, exit_disk: ExitDisk | None = None) -> SampledPath:
    """Exact continuous-time simulation of the aggregate chain.

    Stops at absorption, on leaving ``exit_disk`` (if given) or at
    ``horizon``. ``seed`` is an int or a ``numpy.random.Generator``; the
    default is the replica-0 stream of ``params.seed``.
    """
    rng = generator(params.seed, DYNAMICS, 0) if seed is None else as_generator(seed)
    return _run_aggregate(params, env, x0, horizon, rng, True, exit_disk)


def initial_spins(h, x0: AggregateState) -> np.ndarray:
    """Spin vector with the first ``k_plus`` field-1 sites and the first
    ``k_minus`` field-0 sites up."""
    h = np.asarray(h, dtype=np.int8)
    eta = np.zeros_like(h)
    plus = np.flatnonzero(h == 1)
    minus = np.flatnonzero(h == 0)
    if x0.k_plus > plus.size or x0.k_minus > minus.size:
        raise ValidationError("initial state incompatible with the field")
    eta[plus[: x0.k_plus]] = 1
    eta[minus[: x0.k_minus]] = 1
    return eta


def simulate_full_spin(params: ModelParams, h, eta0, horizon: float, seed=None,
                       record: bool = True) -> SampledPath:
    """Per-site simulation recording the induced (k_plus, k_minus) path."""
    h = np.ascontiguousarray(h, dtype=np.int8)
    eta = np.ascontiguousarray(eta0, dtype=np.int8).copy()
    N = h.size
    if N != params.N or eta.size != N:
        raise ValidationError("field and spin vectors must have length N")
    if N > _FULL_SPIN_MAX_N:
        raise ValidationError(f"full-spin simulation limited to N <= {_FULL_SPIN_MAX_N}")
    if not horizon > 0:
        raise ValidationError("horizon must be positive")
    rng = generator(params.seed, DYNAMICS, 0) if seed is None else as_generator(seed)
    state = np.array([int(np.sum(eta[h == 1])), int(np.sum(eta[h == 0]))], dtype=np.int64)
    times, kps, kms = [np.zeros(1)], [state[:1].copy()], [state[1:].copy()]
    t = 0.0
    size = _FIRST_CHUNK
    dummy_f = np.zeros(1)
    dummy_i = np.zeros(1, dtype=np.int64)
    while True:
        exps = rng.standard_exponential(size)
        sites = rng.integers(0, N, size)
        partners = rng.integers(0, N, size)
        accepts = rng.random(size)
        if record:
            ev_t, ev_kp, ev_km = np.empty(size), np.empty(size, np.int64), np.empty(size, np.int64)
        else:
            ev_t, ev_kp, ev_km = dummy_f, dummy_i, dummy_i
        t, _, nrec, status = kernels.full_spin_chunk(
            eta, h, state, t, params.rho, float(horizon), exps, sites, partners, accepts,
            record, ev_t, ev_kp, ev_km,
        )
        if record and nrec:
            times.append(ev_t[:nrec])
            kps.append(ev_kp[:nrec])
            kms.append(ev_km[:nrec])
        if status != kernels.RUNNING:
            break
        size = min(2 * size, _MAX_CHUNK)
    if not record:
        times.append(np.array([t]))
        kps.append(state[:1].copy())
        kms.append(state[1:].copy())
    absorbed = status == kernels.ABSORBED
    return SampledPath(
        np.concatenate(times), np.concatenate(kps), np.concatenate(kms),
        N, absorbed, False, t, t if absorbed else None,
    )


def absorption_time(params: ModelParams, env: Environment, x0: AggregateState, cap: float,
                    seed=None, exit_disk: ExitDisk | None = None) -> HittingTime:
    """Time to absorption, or to leaving ``exit_disk`` when one is given.

    A run still going at ``cap`` comes back as ``HittingTime(cap, True)``.
    """
    if not cap > 0:
        raise ValidationError("cap must be positive")
    rng = generator(params.seed, DYNAMICS, 0) if seed is None else as_generator(seed)
    path = _run_aggregate(params, env, x0, cap, rng, False, exit_disk)
    if path.censored:
        return HittingTime(float(cap), True)
    return HittingTime(float(path.absorption_time), False)


@dataclass
class BatchSummary:
    params: ModelParams
    mode: str
    shared_env: bool
    seeds: np.ndarray
    times: np.ndarray
    censored: np.ndarray
    q_N: np.ndarray
    n_plus: np.ndarray
    cap: float
    exit_disk: ExitDisk | None = None
    starts: list = field(default_factory=list)

    @property
    def replica_count(self) -> int:
        return int(self.times.size)

    @property
    def n_censored(self) -> int:
        return int(self.censored.sum())

    @property
    def uncensored(self) -> np.ndarray:
        return self.times[~self.censored]

    @property
    def mean(self) -> float:
        u = self.uncensored
        return float(u.mean()) if u.size else math.nan

    @property
    def variance(self) -> float:
        u = self.uncensored
        return float(u.var(ddof=1)) if u.size > 1 else math.nan

    @property
    def std_error(self) -> float:
        u = self.uncensored
        return float(u.std(ddof=1) / np.sqrt(u.size)) if u.size > 1 else math.nan

    def quantiles(self, qs=(0.05, 0.25, 0.5, 0.75, 0.95)) -> dict:
        u = self.uncensored
        if not u.size:
            return {str(p): None for p in qs}
        return {str(p): float(v) for p, v in zip(qs, np.quantile(u, qs))}

    def summary(self) -> dict:
        return {
            "replicas": self.replica_count,
            "censored": self.n_censored,
            "mean": _nan_to_none(self.mean),
            "variance": _nan_to_none(self.variance),
            "std_error": _nan_to_none(self.std_error),
            "quantiles": self.quantiles(),
            "q_N_mean": float(self.q_N.mean()),
            "q_N_std": float(self.q_N.std()),
        }

    def as_dict(self) -> dict:
        p = self.params
        env = (
            {"shared": True, "n_plus": int(self.n_plus[0]), "q_N": float(self.q_N[0])}
            if self.shared_env
            else {"shared": False, "n_plus": [int(v) for v in self.n_plus],
                  "q_N": [float(v) for v in self.q_N]}
        )
        return {
            "params": {"N": p.N, "rho": p.rho, "q": p.q, "seed": p.seed},
            "mode": self.mode,
            "cap": self.cap,
            "exit_disk": None if self.exit_disk is None else
            {"center": list(map(float, self.exit_disk.center)), "radius": self.exit_disk.radius},
            "env": env,
            "replicas": [
                {"seed": int(s), "time": float(t), "censored": bool(c)}
                for s, t, c in zip(self.seeds, self.times, self.censored)
            ],
            "summary": self.summary(),
        }


def _nan_to_none(v):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else v


def batch(params: ModelParams, replica_count: int, mode: str = "absorption", shared_env: bool = True,
          cap: float = 1e6, x0: AggregateState | None = None, exit_disk: ExitDisk | None = None,
          env: Environment | None = None, threads: int = 1) -> BatchSummary:
    """Independent replicas of :func:`absorption_time`.

    Replica ``r`` runs on ``derive_seed(params.seed, 1, r)``. With
    ``shared_env`` one environment (``env`` or the seed's draw) is used by
    all replicas; otherwise replica ``r`` draws its own from key ``(2, r)``.
    ``x0=None`` starts each replica from :func:`default_start`.
    """
    if int(replica_count) != replica_count or replica_count < 1:
        raise ValidationError(f"replica_count must be >= 1, got {replica_count!r}")
    if mode not in ("absorption", "exit"):
        raise ValidationError(f"mode must be 'absorption' or 'exit', got {mode!r}")
    if mode == "exit" and exit_disk is None:
        raise ValidationError("exit mode needs an exit disk")
    disk = exit_disk if mode == "exit" else None
    seeds = np.array([derive_seed(params.seed, DYNAMICS, r) for r in range(replica_count)], dtype=np.uint64)
    if shared_env:
        shared = env if env is not None else sample_environment(params)
        envs = [shared] * replica_count
    else:
        envs = [sample_environment(params, generator(params.seed, REPLICA_ENV, r))
                for r in range(replica_count)]
    starts = [default_start(params, e) if x0 is None else x0.check(e) for e in envs]

    def one(r):
        return absorption_time(params, envs[r], starts[r], cap, int(seeds[r]), disk)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(replica_count)))
    else:
        results = [one(r) for r in range(replica_count)]
    return BatchSummary(
        params=params,
        mode=mode,
        shared_env=shared_env,
        seeds=seeds,
        times=np.array([r.time for r in results]),
        censored=np.array([r.censored for r in results], dtype=bool),
        q_N=np.array([e.q_N for e in envs]),
        n_plus=np.array([e.n_plus for e in envs]),
        cap=float(cap),
        exit_disk=disk,
        starts=starts,
    )
