import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wtlab import dyson
from wtlab import ensemble as ens
from wtlab import flow
from wtlab import harness

from conftest import semicircle_m


@pytest.fixture(scope="module")
def flat32(flat_complex):
    return ens.build_ensemble(flat_complex, 32)


@pytest.fixture(scope="module")
def block16(two_block):
    return ens.build_ensemble(two_block, 16)


def test_flow_terminal_identity(flat32):
    z = 0.3 + 0.7j
    zt = flow.flow_map(flat32, z, 1.0, 1.0)
    assert np.array_equal(zt, np.full(32, z))


def test_flow_flat_closed_form(flat32):
    zt = flow.flow_map(flat32, 1j, 0.0, 1.0)
    expected = np.exp(0.5) * 1j + 2 * np.sinh(0.5) * semicircle_m(1j)
    assert np.abs(zt - expected).max() <= 1e-10
    assert expected.imag == pytest.approx(2.2928, abs=2e-4)


def _rk4_backward(e, z, t, big_t, step):
    """ODE oracle: integrate dz/ds = -S[m(z_s)] - (z_s - a)/2 from s=T to t."""
    zs = np.full(e.n, complex(z))
    s = big_t
    warm = None

    def rhs(vec):
        nonlocal warm
        sol = dyson.solve_vde(e, vec, m0=warm)
        warm = sol.m
        return -e.s_apply(sol.m) - 0.5 * (vec - e.a)

    while s > t + 1e-15:
        h = -min(step, s - t)
        k1 = rhs(zs)
        k2 = rhs(zs + 0.5 * h * k1)
        k3 = rhs(zs + 0.5 * h * k2)
        k4 = rhs(zs + h * k3)
        zs = zs + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        s += h
    return zs


def test_flow_matches_rk4_oracle(block16):
    z = 0.2 + 0.5j
    explicit = flow.flow_map(block16, z, 0.0, 1.0)
    oracle = _rk4_backward(block16, z, 0.0, 1.0, 1e-3)
    assert np.abs(explicit - oracle).max() <= 1e-8


def test_flow_guards(flat32):
    with pytest.raises(ValueError):
        flow.flow_map(flat32, 1j, -0.1, 1.0)
    with pytest.raises(ValueError):
        flow.flow_map(flat32, 1j, 1.5, 1.0)
    with pytest.raises(ValueError):
        flow.flow_map(flat32, 1.0 + 0j, 0.5, 1.0)


def test_m_scaling_along_flow(flat32, block16):
    assert flow.verify_m_scaling(flat32, 1j, 1.0, 1.0) <= 1e-14
    assert flow.verify_m_scaling(flat32, 1j, 0.0, 1.0) <= 1e-9
    worst = max(
        flow.verify_m_scaling(block16, z, t, 1.0)
        for z in (0.2 + 0.3j, -0.4 + 0.05j, 0.1 - 0.2j)
        for t in (0.0, 0.3, 0.7, 1.0)
    )
    assert worst <= 1e-8


def test_flow_cauchy_riemann(block16):
    # entrywise analyticity probed by finite differences
    z = 0.2 + 0.4j
    h = 1e-6
    dx = (flow.flow_map(block16, z + h, 0.3, 1.0) - flow.flow_map(block16, z - h, 0.3, 1.0)) / (2 * h)
    dy = (flow.flow_map(block16, z + 1j * h, 0.3, 1.0) - flow.flow_map(block16, z - 1j * h, 0.3, 1.0)) / (2 * h)
    assert np.abs(dx - (-1j) * dy).max() <= 1e-6


def test_eta_profile_flat(flat32):
    traj = flow.eta_profile(flat32, 0.5 + 0.2j, 1.0, samples=9)
    assert np.allclose(traj.comparability, 1.0)
    assert traj.eta_of_t[-1] == pytest.approx(0.2, abs=1e-12)
    assert np.all(np.diff(traj.eta_of_t) < 0)  # eta decreases toward t = T


def test_eta_profile_block_brackets(block16):
    traj = flow.eta_profile(block16, 0.1 + 1e-3j, 1.0, samples=21)
    assert traj.comparability.max() <= 10.0
    assert np.all(traj.eta_linear_ratio >= 0.1)
    assert np.all(traj.eta_linear_ratio <= 10.0)
    # sign preservation and the terminal lower bound
    assert np.all(traj.z_of_t.imag > 0)
    assert np.all(traj.z_of_t.imag >= 1e-3 - 1e-12)


def test_psi_vertex_and_center():
    chart = flow.ConeChart(vertex=0.1 + 0.2j, aperture=0.25, tilt=0.05, xi=1e-8)
    assert flow.psi(chart, 0.0) == pytest.approx(
        chart.vertex - 1j * np.exp(1j * chart.tilt) * chart.xi, abs=1e-15
    )
    u0 = 1j * chart.xi ** (1.0 / chart.aperture)
    assert abs(flow.psi(chart, u0) - chart.vertex) <= 1e-15


@given(
    gamma=st.floats(0.05, 0.25),
    omega_frac=st.floats(-1.0, 1.0),
    xi=st.floats(1e-10, 1e-6),
)
@settings(max_examples=25, deadline=None)
def test_psi_vertex_identity_property(gamma, omega_frac, xi):
    chart = flow.ConeChart(
        vertex=0.3 + 0.4j, aperture=gamma, tilt=omega_frac * np.pi * gamma / 2, xi=xi
    )
    u0 = 1j * xi ** (1.0 / gamma)
    assert abs(flow.psi(chart, u0) - chart.vertex) <= 1e-13


def test_psi_branch_guard():
    chart = flow.ConeChart(vertex=1j)
    with pytest.raises(ValueError):
        flow.psi(chart, -1j * 0.5)


def test_psi_injective_on_grid():
    chart = flow.ConeChart(vertex=0.1 + 0.2j, aperture=0.2, tilt=0.03, xi=1e-8)
    rng = np.random.default_rng(0)
    us = rng.uniform(-5, 5, 200) + 1j * rng.uniform(0, 5, 200)
    vals = flow.psi(chart, us)
    diffs = np.abs(vals[:, None] - vals[None, :]) + np.eye(200)
    assert diffs.min() > 1e-12


def test_psi_image_in_shifted_cone():
    chart = flow.ConeChart(vertex=0.1 + 0.2j, aperture=0.25, tilt=0.05, xi=1e-8)
    for x in np.concatenate([np.linspace(-50, -0.1, 25), np.linspace(0.1, 50, 25)]):
        zeta = flow.psi(chart, complex(x, 0.0))
        assert flow.cone_contains(chart, zeta, shifted=True, tol=1e-10)
    # membership is via the defining inequality; real x sits on the boundary
    x = 7.0
    zeta = flow.psi(chart, complex(x, 0.0))
    w = zeta - (chart.vertex - 1j * np.exp(1j * chart.tilt) * chart.xi)
    lhs = (np.exp(-1j * chart.tilt) * w).imag
    assert lhs == pytest.approx(np.cos(np.pi * chart.aperture / 2) * abs(w), rel=1e-12)
    assert flow.psi(chart, complex(x, 0)).imag > 0.2  # grows like x^gamma above Im z


def test_integral_repr_scalar_analytic(flat_complex):
    e1 = ens.build_ensemble(flat_complex, 1)
    rep = flow.resolvent_integral_repr(np.zeros((1, 1)), e1, 1j, quad_tol=1e-6)
    assert abs(rep.reconstruction[0, 0] - 1j) <= 1e-6
    assert rep.max_abs_error <= 1e-6


def test_integral_repr_dense_oracle(flat_complex):
    e8 = ens.build_ensemble(flat_complex, 8)
    h = ens.sample_matrix(e8, 3)
    rep = flow.resolvent_integral_repr(h, e8, 0.1 + 0.2j, quad_tol=1e-6)
    # direct dense inverse oracle
    direct = np.linalg.inv(h - (0.1 + 0.2j) * np.eye(8))
    assert np.abs(rep.reconstruction - direct).max() <= 1e-6
    assert rep.max_abs_error <= 1e-6


def test_integral_repr_variants_agree(flat_complex):
    e8 = ens.build_ensemble(flat_complex, 8)
    h = ens.sample_matrix(e8, 3)
    cone = flow.resolvent_integral_repr(h, e8, 0.1 + 0.2j, quad_tol=1e-6)
    horiz = flow.resolvent_stieltjes_repr(h, 0.1 + 0.2j, quad_tol=1e-6)
    assert np.abs(cone.reconstruction - horiz.reconstruction).max() <= 1e-6
    assert horiz.max_abs_error <= 1e-6


def test_integral_repr_flowed_parameter(flat_complex):
    e8 = ens.build_ensemble(flat_complex, 8)
    h = ens.sample_matrix(e8, 3)
    rep = flow.resolvent_integral_repr(h, e8, 0.1 + 0.2j, quad_tol=1e-6, t=0.5, big_t=1.0)
    zt = flow.flow_map(e8, 0.1 + 0.2j, 0.5, 1.0)
    direct = np.linalg.inv(h - np.diag(zt))
    assert np.abs(rep.reconstruction - direct).max() <= 1e-6


def test_integral_repr_guards(flat_complex):
    e8 = ens.build_ensemble(flat_complex, 8)
    h = ens.sample_matrix(e8, 3)
    with pytest.raises(ValueError):
        flow.resolvent_integral_repr(h, e8, 0.1 - 0.2j)
    with pytest.raises(ValueError):
        flow.resolvent_integral_repr(h, e8, 0.3j, flow.ConeChart(vertex=0.4j))
    with pytest.raises(ValueError):
        flow.resolvent_stieltjes_repr(h, 0.1 + 0.2j, xi=0.3)


def test_ward_scalar_is_equality(flat32):
    h = ens.sample_matrix(flat32, 11)
    z = 0.2 + 0.15j
    g = harness.resolvent(h, z)
    val = flow.ward_inequality_check(g, np.full(32, z))
    assert val >= -1e-12
    assert abs(val) <= 1e-12  # exact Ward identity for a scalar parameter


def test_ward_vector_parameter(block16):
    h = ens.sample_matrix(block16, 13)
    zv = flow.flow_map(block16, 0.1 + 0.2j, 0.4, 1.0)
    g = harness.resolvent(h, zv)
    assert flow.ward_inequality_check(g, zv) >= -1e-10


def test_ward_one_by_one():
    g = np.array([[1.0 / (0.7 - (0.1 + 0.3j))]])
    assert abs(flow.ward_inequality_check(g, np.array([0.1 + 0.3j]))) <= 1e-15


def test_ward_lower_half_plane(block16):
    h = ens.sample_matrix(block16, 14)
    zv = np.conj(flow.flow_map(block16, 0.1 + 0.2j, 0.4, 1.0))
    g = harness.resolvent(h, zv)
    assert flow.ward_inequality_check(g, zv) >= -1e-10


def test_ward_guards():
    g = np.eye(2, dtype=complex)
    with pytest.raises(ValueError):
        flow.ward_inequality_check(g, np.array([1j, -1j]))


def test_cone_chart_validation():
    with pytest.raises(ValueError):
        flow.ConeChart(vertex=1j, aperture=0.3)
    with pytest.raises(ValueError):
        flow.ConeChart(vertex=1j, aperture=0.2, tilt=1.0)
    with pytest.raises(ValueError):
        flow.ConeChart(vertex=1j, xi=0.0)
