"""Parameters, quenched environment and the exact aggregate chain.

Sites carry a frozen field ``h_i`` in {0, 1}. Because every site interacts
with every other, the flip rates depend on the spin configuration only
through two counts: ``k_plus`` (up-spins among field-1 sites) and
``k_minus`` (up-spins among field-0 sites). That pair is an exact Markov
chain with four moves, whose rates are computed here.

Rates are evaluated from integer products with a single division, e.g.
``r1 = (n_plus - k_plus) * K / N`` with ``K = k_plus + k_minus``, so they
vanish exactly on the boundary of the state space.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .rng import ENV, generator

__all__ = [
    "ModelParams",
    "Environment",
    "AggregateState",
    "RateQuad",
    "sample_field",
    "sample_environment",
    "transition_rates",
    "rate_arrays",
    "order_parameters",
    "interior_equilibrium",
    "nearest_state",
    "default_start",
]

_SEED_MAX = 2**64


@dataclass(frozen=True)
class ModelParams:
    """Population size ``N``, cross-field imitation probability ``rho``,
    field probability ``q`` and the root RNG seed."""

    N: int
    rho: float
    q: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.N, bool) or int(self.N) != self.N or self.N < 1:
            raise ValidationError(f"N must be a positive integer, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))
        if not np.isfinite(self.rho) or not 0.0 <= self.rho <= 1.0:
            raise ValidationError(f"rho must lie in [0, 1], got {self.rho!r}")
        if not np.isfinite(self.q) or not 0.5 <= self.q < 1.0:
            raise ValidationError(f"q must satisfy 1/2 <= q < 1, got {self.q!r}")
        if int(self.seed) != self.seed or not 0 <= self.seed < _SEED_MAX:
            raise ValidationError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "q", float(self.q))
        object.__setattr__(self, "seed", int(self.seed))

    def replace(self, **changes) -> "ModelParams":
        fields = dict(N=self.N, rho=self.rho, q=self.q, seed=self.seed)
        fields.update(changes)
        return ModelParams(**fields)


@dataclass(frozen=True)
class Environment:
    """Quenched field, stored through its sufficient statistic ``n_plus``."""

    N: int
    n_plus: int

    def __post_init__(self):
        if not 0 <= self.n_plus <= self.N:
            raise ValidationError(f"n_plus must lie in [0, {self.N}], got {self.n_plus}")

    @property
    def n_minus(self) -> int:
        return self.N - self.n_plus

    @property
    def q_N(self) -> float:
        return self.n_plus / self.N

    @classmethod
    def from_field(cls, h) -> "Environment":
        h = np.asarray(h)
        if h.ndim != 1 or not np.isin(h, (0, 1)).all():
            raise ValidationError("field must be a 1-d array of zeros and ones")
        return cls(N=int(h.size), n_plus=int(h.sum()))

    @classmethod
    def pinned(cls, params: ModelParams) -> "Environment":
        """The environment with ``n_plus = round(N q)``."""
        return cls(N=params.N, n_plus=int(round(params.N * params.q)))


@dataclass(frozen=True)
class AggregateState:
    k_plus: int
    k_minus: int

    @property
    def K(self) -> int:
        return self.k_plus + self.k_minus

    def check(self, env: Environment) -> "AggregateState":
        if not (0 <= self.k_plus <= env.n_plus and 0 <= self.k_minus <= env.n_minus):
            raise ValidationError(
                f"state ({self.k_plus}, {self.k_minus}) outside "
                f"[0, {env.n_plus}] x [0, {env.n_minus}]"
            )
        return self

    def is_absorbed(self, env: Environment) -> bool:
        return self.K == 0 or (self.k_plus == env.n_plus and self.k_minus == env.n_minus)

    @classmethod
    def all_zero(cls) -> "AggregateState":
        return cls(0, 0)

    @classmethod
    def all_one(cls, env: Environment) -> "AggregateState":
        return cls(env.n_plus, env.n_minus)


@dataclass(frozen=True)
class RateQuad:
    """Rates of ``k_plus +/- 1`` (``r1``, ``l1``) and ``k_minus +/- 1`` (``r2``, ``l2``)."""

    r1: float
    l1: float
    r2: float
    l2: float

    @property
    def total(self) -> float:
        return self.r1 + self.l1 + self.r2 + self.l2

    def as_array(self) -> np.ndarray:
        return np.array([self.r1, self.l1, self.r2, self.l2])

    def is_zero(self) -> bool:
        return self.r1 == 0.0 and self.l1 == 0.0 and self.r2 == 0.0 and self.l2 == 0.0


def sample_field(params: ModelParams, rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw the per-site field ``h`` as i.i.d. Bernoulli(q) values (int8)."""
    rng = generator(params.seed, ENV) if rng is None else rng
    return (rng.random(params.N) < params.q).astype(np.int8)


def sample_environment(params: ModelParams, rng: np.random.Generator | None = None) -> Environment:
    """Quenched environment drawn from the seed; ``n_plus`` is Binomial(N, q)."""
    return Environment.from_field(sample_field(params, rng))


def rate_arrays(k_plus, k_minus, N: int, n_plus: int, rho: float, q_nominal: float | None = None):
    """Vectorised rates ``(r1, l1, r2, l2)`` on arrays of states.

    With ``q_nominal`` given, the nominal field frequency replaces the
    quenched ``n_plus / N`` in the two growth rates.
    """
    kp = np.asarray(k_plus, dtype=np.int64)
    km = np.asarray(k_minus, dtype=np.int64)
    K = kp + km
    free = N - K
    if q_nominal is None:
        r1 = ((n_plus - kp) * K) / N
        r2 = rho * (((N - n_plus - km) * K) / N)
    else:
        r1 = ((q_nominal * N - kp) * K) / N
        r2 = rho * (((N - q_nominal * N - km) * K) / N)
    l1 = rho * ((kp * free) / N)
    l2 = (km * free) / N
    return r1, l1, r2, l2


def transition_rates(
    state: AggregateState, env: Environment, params: ModelParams, nominal_q: bool = False
) -> RateQuad:
    """Rates of the four moves of the aggregate chain at ``state``.

    Uses the quenched frequency ``n_plus / N`` unless ``nominal_q`` is set.
    """
    state.check(env)
    r1, l1, r2, l2 = rate_arrays(
        state.k_plus, state.k_minus, params.N, env.n_plus, params.rho,
        params.q if nominal_q else None,
    )
    return RateQuad(float(r1), float(l1), float(r2), float(l2))


def order_parameters(state: AggregateState, params: ModelParams) -> tuple[float, float]:
    return state.k_plus / params.N, state.k_minus / params.N


def interior_equilibrium(rho: float, q: float) -> tuple[float, float]:
    """Coexistence fixed point of the mean-field flow (admissible only for
    ``rho < (1 - q) / q``)."""
    if rho >= 1.0:
        raise ValidationError("no isolated interior equilibrium at rho = 1")
    xp = (q * (1.0 + rho) - rho) / ((1.0 + rho) * (1.0 - rho))
    return xp, rho * xp


def nearest_state(point, env: Environment) -> AggregateState:
    """Lattice state closest to ``point`` in the (m+, m-) plane.

    Ties go to the larger ``k_plus``, then the larger ``k_minus``.
    """
    N = env.N
    best = None
    for kp in {int(np.floor(point[0] * N)), int(np.ceil(point[0] * N))}:
        for km in {int(np.floor(point[1] * N)), int(np.ceil(point[1] * N))}:
            kp_c = min(max(kp, 0), env.n_plus)
            km_c = min(max(km, 0), env.n_minus)
            d = (kp_c / N - point[0]) ** 2 + (km_c / N - point[1]) ** 2
            key = (d, -kp_c, -km_c)
            if best is None or key < best[0]:
                best = (key, kp_c, km_c)
    return AggregateState(best[1], best[2])


def default_start(params: ModelParams, env: Environment) -> AggregateState:
    """Lattice state nearest the interior equilibrium; at ``rho = 1`` the
    state with ``K = N // 2`` split in proportion to the field."""
    if params.rho < 1.0 and params.rho < (1.0 - params.q) / params.q:
        return nearest_state(interior_equilibrium(params.rho, params.q), env)
    K = params.N // 2
    kp = min(env.n_plus, (env.n_plus * K) // params.N)
    return AggregateState(kp, min(env.n_minus, K - kp))
