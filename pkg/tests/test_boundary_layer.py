import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stratlayer.boundary_layer import (
    BLState,
    Trajectory,
    auto_dt,
    compat_integral,
    compatibility_residual,
    decay_flag,
    discrete_energy,
    energy_identity_report,
    mode_profile_state,
    nodal_energy,
    random_state,
    run_linear_bl,
    solve_iota_pressure,
    step_iota_linear,
    step_linear_bl,
    w_from_v,
)
from stratlayer.errors import CompatibilityError, ConfigError
from stratlayer.grids import GridSpec, forward_transform, inverse_transform, physical_grid

SMALL = GridSpec(Nx=4, Ny=4, Neta=161, L_eta=8.0)


def test_w_from_v_closed_form():
    spec = GridSpec(Nx=8, Ny=8, Neta=8001, L_eta=20.0)
    x, y = physical_grid(spec)
    eta = spec.eta[:, None, None]
    vx = np.exp(-eta) * (1 - eta) * np.cos(x)
    state = BLState.zeros(spec)
    state.v[0] = forward_transform(vx, spec).coeffs
    out = w_from_v(state)
    w = inverse_transform(out.w, spec)
    assert np.max(np.abs(w - eta * np.exp(-eta) * np.sin(x))) < 2e-6
    assert np.all(out.w[0] == 0)
    assert np.max(np.abs(out.w[-1])) <= out.compat_residual + 1e-300


def test_w_from_zero_and_flag():
    assert np.all(w_from_v(BLState.zeros(SMALL)).w == 0)
    bad = BLState.zeros(SMALL)
    x, _ = physical_grid(SMALL)
    bad.v[0] = np.exp(-SMALL.eta)[:, None, None] * forward_transform(np.cos(x), SMALL).coeffs
    assert w_from_v(bad).flagged
    assert not w_from_v(mode_profile_state(SMALL, component="v")).flagged


def test_zero_state_stays_zero():
    z = BLState.zeros(SMALL)
    for step in (step_linear_bl, step_iota_linear):
        out = step(z, 0.01)
        assert np.all(out.v == 0) and np.all(out.theta == 0)
        assert out.t == pytest.approx(0.01)


def test_state_shape_checked():
    with pytest.raises(ConfigError):
        BLState(np.zeros((2, 3, 4, 3)), np.zeros((3, 4, 3)), SMALL)
    with pytest.raises(ConfigError):
        step_linear_bl(BLState.zeros(SMALL), 0.0)


def test_short_time_taylor():
    spec = GridSpec(Nx=4, Ny=4, Neta=2001, L_eta=30.0)
    state = mode_profile_state(spec, k=(1, 0), amplitude=1.0, decay=1.0)
    errs = []
    for t in (0.04, 0.02, 0.01):
        out = step_linear_bl(state, t)
        # cos x carries coefficient 1/2 at k=(1,0); the tail of e^-eta is e^-eta
        expected = 1j * t * 0.5 * np.exp(-spec.eta)
        errs.append(np.max(np.abs(out.v[0][:, 1, 0] - expected)))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(ratios > 3.5)
    assert errs[-1] < 1e-3 * 0.01


def test_half_line_energy_conserved():
    spec = GridSpec(Nx=8, Ny=8, Neta=201, L_eta=10.0)
    s = random_state(spec, np.random.default_rng(7), decay=3.0)
    tr = run_linear_bl(s, 2e-3, 1.0, stride=100)
    e = np.array([discrete_energy(y, spec) for y in tr.data])
    assert np.max(np.abs(e - e[0])) / e[0] <= 1e-8
    # the nodal trapezoid energy agrees to quadrature accuracy
    assert nodal_energy(tr.data[-1], spec) == pytest.approx(e[-1], rel=1e-2)


def test_half_line_compatibility_drifts():
    """The half-line system moves the layer-integrated divergence: d/dt C = -|k|^2 int eta theta."""
    spec = GridSpec(Nx=4, Ny=4, Neta=401, L_eta=20.0)
    s = mode_profile_state(spec, component="theta", decay=1.0)
    dt = 1e-3
    out = step_linear_bl(s, dt)
    rate = (compat_integral(out.compressed(), spec) - compat_integral(s.compressed(), spec)) / dt
    theta = s.compressed()[2]
    from stratlayer.boundary_layer import mode_set

    ms = mode_set(spec)
    predicted = -ms.k2 * np.trapezoid(spec.eta[:, None] * theta, dx=spec.h_eta, axis=0)
    np.testing.assert_allclose(rate, predicted, atol=2e-3)
    assert np.max(np.abs(predicted)) > 0.1


def test_iota_pressure_examples():
    spec = GridSpec(Nx=4, Ny=4, Neta=20001, L_eta=20.0)
    assert np.all(solve_iota_pressure(BLState.zeros(spec)).coeffs == 0)
    c = 0.7 - 0.2j
    s = BLState.zeros(spec)
    s.theta[:, 1, 0] = c
    s.theta[:, 0, 1] = c
    s.theta[:, 0, 0] = 5.0
    pi = solve_iota_pressure(s)
    assert pi.coeff(1, 0) == pytest.approx(-c * 20 / 2, rel=1e-12)
    assert pi.coeff(0, 1) == pytest.approx(-c * 20 / 2, rel=1e-12)
    assert pi.coeff(0, 0) == 0
    s.theta[:, 1, 0] = np.exp(-spec.eta)
    expected = -(20 - 1 + np.exp(-20.0)) / 20
    # nested trapezoid sums on h = 1e-3 carry an O(h^2) error
    assert solve_iota_pressure(s).coeff(1, 0) == pytest.approx(expected, abs=1e-6)
    assert expected == pytest.approx(-0.95, abs=1e-9)


def test_iota_rejects_incompatible():
    bad = BLState.zeros(SMALL)
    bad.v[0][:, 1, 0] = np.exp(-SMALL.eta)
    with pytest.raises(CompatibilityError):
        step_iota_linear(bad, 0.01)
    with pytest.raises(CompatibilityError):
        run_linear_bl(bad, 0.01, 0.1, system="iota")


def test_iota_conserves_energy_and_compatibility():
    spec = GridSpec(Nx=8, Ny=8, Neta=201, L_eta=10.0)
    s = random_state(spec, np.random.default_rng(3), decay=3.0)
    tr = run_linear_bl(s, 2e-3, 1.0, system="iota", stride=50)
    e = np.array([discrete_energy(y, spec) for y in tr.data])
    assert np.max(np.abs(e - e[0])) / e[0] <= 1e-8
    compat = [np.max(np.abs(compat_integral(y, spec))) for y in tr.data]
    assert max(compat) <= 1e-10


def test_iota_approaches_half_line():
    """Same decaying data: the finite-depth solution gets closer to the half-line one as L grows."""
    diffs = []
    for L in (10.0, 20.0, 40.0):
        spec = GridSpec(Nx=4, Ny=4, Neta=int(20 * L) + 1, L_eta=L)
        s = mode_profile_state(spec, component="theta", decay=2.0)
        half = run_linear_bl(s, 5e-3, 1.0, system="half-line").final()
        lid = run_linear_bl(s, 5e-3, 1.0, system="iota").final()
        diffs.append(np.sqrt(discrete_energy(lid.compressed() - half.compressed(), spec)))
    assert diffs[0] > diffs[1] > diffs[2]


def test_energy_identity_converges_in_dt():
    spec = GridSpec(Nx=4, Ny=4, Neta=201, L_eta=10.0)
    s = mode_profile_state(spec, component="both", decay=2.0)
    res = []
    for dt in (4e-3, 2e-3, 1e-3):
        rep = energy_identity_report(run_linear_bl(s, dt, 0.2), 1)
        res.append(rep.max_residual)
        assert rep.growth_constant is not None and np.isfinite(rep.growth_constant)
    orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(orders >= 3.0)


def test_energy_identity_higher_order_and_bound():
    """k = 2 uses finite differences: the residual is spatial, O(h^2)."""
    res = []
    for n in (201, 401):
        spec = GridSpec(Nx=4, Ny=4, Neta=n, L_eta=10.0)
        s = mode_profile_state(spec, component="both", decay=2.0)
        tr = run_linear_bl(s, 2e-3, 0.2)
        rep = energy_identity_report(tr, 2)
        res.append(rep.max_residual)
    assert np.log2(res[0] / res[1]) >= 1.8
    hk = rep.hk_norm
    assert np.all(hk <= np.exp(rep.growth_constant * (rep.times - rep.times[0])) * hk[0] * (1 + 1e-12))


def test_energy_identity_degenerate_cases():
    tr = Trajectory.zeros(SMALL, np.linspace(0, 0.1, 11))
    rep = energy_identity_report(tr, 1)
    assert rep.max_residual == 0 and rep.growth_constant is None
    with pytest.raises(ConfigError):
        energy_identity_report(tr, 0)
    with pytest.raises(ConfigError):
        energy_identity_report(Trajectory.zeros(SMALL, np.linspace(0, 0.1, 3)), 1)


def test_k_zero_mode_frozen():
    s = BLState.zeros(SMALL)
    s.v[0][:, 0, 0] = np.exp(-SMALL.eta)
    s.theta[:, 0, 0] = np.exp(-2 * SMALL.eta)
    for step in (step_linear_bl, step_iota_linear):
        out = step(s, 0.05)
        np.testing.assert_array_equal(out.v[0][:, 0, 0], s.v[0][:, 0, 0])
        np.testing.assert_array_equal(out.theta[:, 0, 0], s.theta[:, 0, 0])


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_random_states_are_admissible(seed):
    spec = GridSpec(Nx=8, Ny=8, Neta=101, L_eta=12.0)
    s = random_state(spec, np.random.default_rng(seed), decay=3.0)
    assert compatibility_residual(s) <= 1e-12 * max(1.0, np.max(np.abs(s.v)))
    assert not decay_flag(s, threshold=1e-10)
    phys = inverse_transform(s.theta, spec)
    back = forward_transform(phys, spec).coeffs
    np.testing.assert_allclose(back, s.theta, atol=1e-13)


def test_auto_dt():
    spec = GridSpec(Nx=8, Ny=8, L_eta=10.0)
    assert auto_dt(spec) == pytest.approx(0.25 / (np.hypot(2, 2) * 10.0))


def test_depth_sweep_validation_and_shrinking_difference():
    from stratlayer.boundary_layer import iota_depth_sweep, layer_l2

    spec = GridSpec(Nx=4, Ny=4, Neta=41, L_eta=4.0)

    def make(g):
        return mode_profile_state(g, decay=3.0)

    with pytest.raises(ConfigError):
        iota_depth_sweep(make, spec, [4.0])
    with pytest.raises(ConfigError):
        iota_depth_sweep(make, spec, [4.05, 8.0])
    sweep = iota_depth_sweep(make, spec, [2.0, 4.0], T=0.2)
    assert sweep.differences[0] > sweep.differences[1] > 0
    assert sweep.ratios.shape == (1,)
    assert layer_l2(BLState.zeros(spec).compressed(), spec) == 0.0
