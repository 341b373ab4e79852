import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hetvoter.errors import DegenerateEquilibria, ValidationError
from hetvoter.meanfield import drift, equilibria, integrate_ode, is_admissible, jacobian
from hetvoter.model import ModelParams, interior_equilibrium, rate_arrays


def z_of(rho):
    return np.array([1 / (2 * (1 + rho)), rho / (2 * (1 + rho))])


def A_of(rho):
    a, b = (1 + rho**2) / (2 * (1 + rho)), rho / (1 + rho)
    return np.array([[-a, b], [b, -a]])


@pytest.mark.parametrize("rho,q", [(0.5, 0.5), (0.2, 0.7), (1.0, 0.5), (0.0, 0.6)])
def test_drift_equals_rates_over_N(rho, q):
    p = ModelParams(N=100, rho=rho, q=q)
    xs = np.linspace(0, q, 100)
    ys = np.linspace(0, 1 - q, 100)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    got = drift(np.stack([X, Y], axis=-1), p)
    # the same polynomial evaluated as per-N rates with real-valued counts
    m = X + Y
    r1, l1 = (q - X) * m, rho * X * (1 - m)
    r2, l2 = rho * (1 - q - Y) * m, Y * (1 - m)
    np.testing.assert_allclose(got[..., 0], r1 - l1, atol=1e-14)
    np.testing.assert_allclose(got[..., 1], r2 - l2, atol=1e-14)


def test_drift_matches_lattice_rates():
    N, n_plus, rho = 200, 100, 0.4
    p = ModelParams(N=N, rho=rho, q=n_plus / N)
    kp, km = np.meshgrid(np.arange(n_plus + 1), np.arange(N - n_plus + 1), indexing="ij")
    r1, l1, r2, l2 = rate_arrays(kp, km, N, n_plus, rho)
    d = drift(np.stack([kp / N, km / N], axis=-1), p)
    np.testing.assert_allclose(d[..., 0], (r1 - l1) / N, atol=1e-14)
    np.testing.assert_allclose(d[..., 1], (r2 - l2) / N, atol=1e-14)


@given(st.floats(0, 1), st.floats(0.5, 0.95), st.floats(0, 1))
def test_box_forward_invariant(rho, q, s):
    p = ModelParams(N=10, rho=rho, q=q)
    # outward normal components on the four faces
    assert drift([0.0, s * (1 - q)], p)[0] >= -1e-15
    assert drift([q, s * (1 - q)], p)[0] <= 1e-15
    assert drift([s * q, 0.0], p)[1] >= -1e-15
    assert drift([s * q, 1 - q], p)[1] <= 1e-15


@pytest.mark.parametrize("rho", np.round(np.arange(0.01, 1.0, 0.01), 2))
def test_interior_equilibrium_is_z_at_half(rho):
    p = ModelParams(N=10, rho=float(rho))
    z = z_of(rho)
    np.testing.assert_allclose(interior_equilibrium(rho, 0.5), z, atol=1e-15)
    np.testing.assert_allclose(drift(z, p), 0, atol=1e-15)
    np.testing.assert_allclose(jacobian(z, p), A_of(rho), atol=1e-10)


def test_jacobian_against_central_differences():
    p = ModelParams(N=10, rho=0.37, q=0.62)
    for x in ([0.1, 0.2], [0.5, 0.01], [0.3, 0.3]):
        x = np.array(x)
        J = np.empty((2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = 1e-6
            J[:, j] = (drift(x + e, p) - drift(x - e, p)) / 2e-6
        np.testing.assert_allclose(jacobian(x, p), J, atol=1e-8)


def test_equilibria_interior_q06():
    eq = equilibria(ModelParams(N=10, rho=0.5, q=0.6))
    kinds = {e.kind: e for e in eq}
    assert set(kinds) == {"all_ones", "all_zeros", "interior"}
    np.testing.assert_allclose(kinds["interior"].location, (8 / 15, 4 / 15), atol=1e-15)
    np.testing.assert_allclose(drift(kinds["interior"].location, ModelParams(N=10, rho=0.5, q=0.6)), 0, atol=1e-15)
    assert kinds["interior"].classification == "stable"


def test_equilibria_non_admissible():
    p = ModelParams(N=10, rho=0.8, q=0.6)
    assert not is_admissible(p)
    kinds = {e.kind: e for e in equilibria(p)}
    assert "interior" not in kinds
    assert kinds["all_ones"].classification == "stable"
    assert kinds["all_zeros"].classification == "unstable"


def test_equilibria_eigenvalues_at_half():
    eq = {e.kind: e for e in equilibria(ModelParams(N=10, rho=0.5))}
    ev = np.sort(np.real(eq["interior"].eigenvalues))
    np.testing.assert_allclose(ev, [-3 / 4, -1 / 12], atol=1e-14)
    assert eq["interior"].as_dict()["classification"] == "stable"


def test_equilibria_degenerate_at_voter_point():
    with pytest.raises(DegenerateEquilibria):
        equilibria(ModelParams(N=10, rho=1.0))


@pytest.mark.parametrize("rho,q", [(0.5, 0.5), (0.3, 0.6)])
def test_equilibria_are_fixed_by_integrator(rho, q):
    p = ModelParams(N=10, rho=rho, q=q)
    for e in equilibria(p):
        tr = integrate_ode(e.location, p, 20.0, 0.05)
        assert np.max(np.abs(tr.points - np.asarray(e.location))) <= 1e-9


def test_flow_converges_to_z():
    # the slow mode decays like exp(-t/12), so distance 1e-6 needs t of about 160
    p = ModelParams(N=10, rho=0.5)
    coarse = integrate_ode((0.05, 0.05), p, 200.0, 0.05)
    fine = integrate_ode((0.05, 0.05), p, 200.0, 0.0125)
    np.testing.assert_allclose(coarse.points[-1], (1 / 3, 1 / 6), atol=1e-6)
    np.testing.assert_allclose(coarse.points[-1], fine.points[-1], atol=1e-9)
    assert coarse.times[-1] == 200.0
    d = np.linalg.norm(coarse.points - (1 / 3, 1 / 6), axis=1)
    rate = (np.log(d[2000]) - np.log(d[3000])) / 50.0
    assert rate == pytest.approx(1 / 12, rel=1e-3)


@given(st.floats(0, 0.5), st.floats(0, 1), st.floats(0, 1))
def test_magnetisation_conserved_at_voter_point(q_frac, a, b):
    q = 0.5 + q_frac * 0.45
    p = ModelParams(N=10, rho=1.0, q=q)
    tr = integrate_ode((a * q, b * (1 - q)), p, 10.0, 0.1)
    m = tr.points.sum(axis=1)
    assert np.max(np.abs(m - m[0])) <= 1e-9


def test_integrator_stays_in_box():
    p = ModelParams(N=10, rho=0.9, q=0.8)
    tr = integrate_ode((0.8, 0.2), p, 30.0, 0.5)
    assert np.all(tr.points[:, 0] <= 0.8) and np.all(tr.points[:, 1] <= 0.2)
    assert np.all(tr.points >= 0)


def test_integrator_short_last_step(tmp_path):
    p = ModelParams(N=10, rho=0.5)
    tr = integrate_ode((0.1, 0.1), p, 1.05, 0.1)
    assert tr.times[-1] == 1.05 and len(tr.times) == 12
    tr.to_csv(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "t,m_plus,m_minus"


@pytest.mark.parametrize("kw", [dict(horizon=0, step=0.1), dict(horizon=1, step=-1),
                                dict(horizon=1, step=0.1, x0=(0.6, 0.1))])
def test_integrator_validation(kw):
    x0 = kw.pop("x0", (0.1, 0.1))
    with pytest.raises(ValidationError):
        integrate_ode(x0, ModelParams(N=10, rho=0.5), **kw)
