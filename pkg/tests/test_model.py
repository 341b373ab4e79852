import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hetvoter.errors import ValidationError
from hetvoter.model import (
    AggregateState,
    Environment,
    ModelParams,
    RateQuad,
    default_start,
    interior_equilibrium,
    nearest_state,
    order_parameters,
    rate_arrays,
    sample_environment,
    transition_rates,
)


def per_site_rates(h, eta, rho):
    """Rates summed site by site from the verbal update rule."""
    h, eta = np.asarray(h), np.asarray(eta)
    N = h.size
    out = np.zeros(4)  # r1, l1, r2, l2
    for i in range(N):
        rate = 0.0
        for j in range(N):
            if eta[j] != eta[i]:
                rate += (1.0 if eta[j] == h[i] else rho) / N
        idx = (0 if eta[i] == 0 else 1) if h[i] == 1 else (2 if eta[i] == 0 else 3)
        out[idx] += rate
    return out


# ----------------------------------------------------------- parameters

@pytest.mark.parametrize("kw", [
    dict(N=0, rho=0.5), dict(N=2.5, rho=0.5), dict(N=True, rho=0.5),
    dict(N=10, rho=-0.1), dict(N=10, rho=1.1), dict(N=10, rho=float("nan")),
    dict(N=10, rho=0.5, q=0.49), dict(N=10, rho=0.5, q=1.0),
    dict(N=10, rho=0.5, seed=-1), dict(N=10, rho=0.5, seed=2**64),
])
def test_params_rejected(kw):
    with pytest.raises(ValidationError):
        ModelParams(**kw)


def test_params_accept_edges():
    ModelParams(N=1, rho=0.0, q=0.5, seed=2**64 - 1)
    ModelParams(N=1, rho=1.0, q=0.999)


def test_environment_from_field_counts():
    env = Environment.from_field([1, 0, 1, 1])
    assert env.n_plus == 3 and env.q_N == 0.75 and env.n_minus == 1


@pytest.mark.parametrize("n_plus", [-1, 11])
def test_environment_range(n_plus):
    with pytest.raises(ValidationError):
        Environment(10, n_plus)


def test_sample_environment_deterministic_and_seeded():
    p = ModelParams(N=1000, rho=0.5, seed=7)
    assert sample_environment(p) == sample_environment(p)
    draws = {sample_environment(p.replace(seed=s)).n_plus for s in range(20)}
    assert len(draws) > 5


def test_sample_environment_concentration():
    # binomial sd at N=1e6, q=0.6 is 4.9e-4, so 0.002 is about 4 sd
    hits = sum(abs(sample_environment(ModelParams(N=10**6, rho=0.5, q=0.6, seed=s)).q_N - 0.6) <= 0.002
               for s in range(200))
    assert hits >= 198


# ----------------------------------------------------------------- rates

def test_rates_hand_example():
    env = Environment(4, 2)
    r = transition_rates(AggregateState(1, 1), env, ModelParams(N=4, rho=0.5))
    assert (r.r1, r.l1, r.r2, r.l2) == (0.5, 0.25, 0.25, 0.5)


def test_absorbing_states_have_zero_rates():
    p = ModelParams(N=10, rho=0.3)
    env = Environment(10, 6)
    assert transition_rates(AggregateState.all_zero(), env, p).is_zero
    assert transition_rates(AggregateState.all_one(env), env, p).is_zero


@pytest.mark.parametrize("N", range(1, 21))
def test_zero_rates_iff_consensus_exhaustive(N):
    for n_plus in range(N + 1):
        kp, km = np.meshgrid(np.arange(n_plus + 1), np.arange(N - n_plus + 1), indexing="ij")
        for rho in (0.0, 0.4, 1.0):
            r1, l1, r2, l2 = rate_arrays(kp, km, N, n_plus, rho)
            zero = (r1 == 0) & (l1 == 0) & (r2 == 0) & (l2 == 0)
            consensus = ((kp == 0) & (km == 0)) | ((kp == n_plus) & (km == N - n_plus))
            if rho == 0.0:
                # without cross-field imitation more states freeze; consensus still does
                assert np.all(zero[consensus])
            else:
                assert np.array_equal(zero, consensus)
            total = r1 + l1 + r2 + l2
            assert np.all(total <= N + 1e-12)
            assert np.all(np.stack([r1, l1, r2, l2]) >= 0)


@pytest.mark.parametrize("N", range(1, 7))
def test_rates_match_site_by_site_rule_exhaustive(N):
    for h in itertools.product((0, 1), repeat=N):
        env = Environment.from_field(h)
        for eta in itertools.product((0, 1), repeat=N):
            kp = sum(e for e, f in zip(eta, h) if f == 1)
            km = sum(e for e, f in zip(eta, h) if f == 0)
            for rho in (0.0, 0.35, 1.0):
                got = transition_rates(AggregateState(kp, km), env, ModelParams(N=N, rho=rho)).as_array()
                np.testing.assert_allclose(got, per_site_rates(h, eta, rho), rtol=1e-13, atol=1e-15)


@given(st.integers(7, 10).flatmap(lambda N: st.tuples(
    st.lists(st.integers(0, 1), min_size=N, max_size=N),
    st.lists(st.integers(0, 1), min_size=N, max_size=N))),
    st.floats(0, 1))
def test_rates_match_site_by_site_rule(fields, rho):
    h, eta = fields
    N = len(h)
    env = Environment.from_field(h)
    kp = sum(e for e, f in zip(eta, h) if f == 1)
    km = sum(e for e, f in zip(eta, h) if f == 0)
    got = transition_rates(AggregateState(kp, km), env, ModelParams(N=N, rho=rho)).as_array()
    np.testing.assert_allclose(got, per_site_rates(h, eta, rho), rtol=1e-12, atol=1e-14)


@given(st.integers(2, 400).flatmap(lambda N: st.tuples(
    st.just(N), st.integers(0, N))).flatmap(lambda t: st.tuples(
        st.just(t[0]), st.just(t[1]), st.integers(0, t[1]), st.integers(0, t[0] - t[1]))))
def test_voter_limit_symmetric_in_K(args):
    N, n_plus, kp, km = args
    r = transition_rates(AggregateState(kp, km), Environment(N, n_plus), ModelParams(N=N, rho=1.0))
    K = kp + km
    assert r.r1 + r.r2 == pytest.approx(K * (N - K) / N, rel=1e-14, abs=1e-14)
    assert r.l1 + r.l2 == pytest.approx(K * (N - K) / N, rel=1e-14, abs=1e-14)


def test_rates_formula_in_fractions():
    N, n_plus, rho = 50, 27, 0.3
    kp, km = 11, 9
    x, y = kp / N, km / N
    m, qN = x + y, n_plus / N
    r = transition_rates(AggregateState(kp, km), Environment(N, n_plus), ModelParams(N=N, rho=rho))
    np.testing.assert_allclose(
        r.as_array(),
        [N * (qN - x) * m, N * rho * x * (1 - m), N * rho * (1 - qN - y) * m, N * y * (1 - m)],
        rtol=1e-13)


def test_nominal_q_switch():
    p = ModelParams(N=10, rho=0.5, q=0.5)
    env = Environment(10, 6)
    s = AggregateState(2, 1)
    quenched = transition_rates(s, env, p)
    nominal = transition_rates(s, env, p, nominal_q=True)
    assert quenched.l1 == nominal.l1 and quenched.l2 == nominal.l2
    assert quenched.r1 == pytest.approx((6 - 2) * 3 / 10)
    assert nominal.r1 == pytest.approx((5 - 2) * 3 / 10)


def test_state_validation():
    env = Environment(10, 4)
    with pytest.raises(ValidationError):
        AggregateState(5, 0).check(env)
    with pytest.raises(ValidationError):
        AggregateState(0, 7).check(env)
    with pytest.raises(ValidationError):
        AggregateState(-1, 0).check(env)


def test_ratequad_total():
    assert RateQuad(0.5, 0.25, 0.25, 0.5).total == 1.5


# ------------------------------------------------------ order parameters

def test_order_parameters_examples():
    assert order_parameters(AggregateState(0, 0), ModelParams(N=5, rho=0.5)) == (0.0, 0.0)
    env = Environment(10, 6)
    assert order_parameters(AggregateState.all_one(env), ModelParams(N=10, rho=0.5)) == (0.6, 0.4)
    assert order_parameters(AggregateState(3, 1), ModelParams(N=8, rho=0.5)) == (0.375, 0.125)


def test_interior_equilibrium_closed_forms():
    assert interior_equilibrium(0.5, 0.5) == pytest.approx((1 / 3, 1 / 6), abs=1e-15)
    assert interior_equilibrium(0.5, 0.6) == pytest.approx((8 / 15, 4 / 15), abs=1e-15)
    with pytest.raises(ValidationError):
        interior_equilibrium(1.0, 0.5)


def test_nearest_state_and_ties():
    env = Environment(10, 5)
    assert nearest_state((1 / 3, 1 / 6), env) == AggregateState(3, 2)
    # exactly half-way in both coordinates (dyadic, so the tie is exact): larger counts win
    assert nearest_state((2.5 / 8, 1.5 / 8), Environment(8, 4)) == AggregateState(3, 2)
    # clamps to the lattice
    assert nearest_state((0.9, 0.0), env) == AggregateState(5, 0)


def test_default_start():
    p = ModelParams(N=60, rho=0.5)
    env = Environment.pinned(p)
    assert default_start(p, env) == AggregateState(20, 10)
    p1 = ModelParams(N=64, rho=1.0)
    s = default_start(p1, Environment.pinned(p1))
    assert s.K == 32 and s == AggregateState(16, 16)
