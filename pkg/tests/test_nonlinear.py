import numpy as np
import pytest

from stratlayer.boundary_layer import (
    BLState,
    Trajectory,
    mode_profile_state,
    run_linear_bl,
    step_linear_bl,
)
from stratlayer.errors import CompatibilityError, ConfigError, DivergenceError
from stratlayer.grids import GridSpec
from stratlayer.nonlinear import (
    BLForcing,
    MetricEvaluator,
    compatibility_history,
    frozen_step,
    nonlinear_residual,
    picard_fixed_point,
    solve_frozen,
)
from stratlayer.norms import NormParams, tau_schedule

SPEC = GridSpec(Nx=8, Ny=8, Neta=64, L_eta=8.0)
PARAMS = NormParams(d=1.0, r=2, tau=0.5, M=6)


def single_mode(amplitude=1e-2, spec=SPEC, k=(1, 0)):
    return mode_profile_state(spec, k=k, amplitude=amplitude, decay=3.0, component="both")


@pytest.fixture(scope="module")
def converged():
    init = single_mode()
    traj, report, schedule = picard_fixed_point(init, None, 0.05, 1e-10, 5e-3, PARAMS, C_d=1e-3)
    return init, traj, report, schedule


def test_reduces_to_linear_step_bit_for_bit():
    s = single_mode(1.0)
    a = frozen_step(s, BLState.zeros(SPEC), None, 1e-3, project=False)
    b = step_linear_bl(s, 1e-3)
    assert np.array_equal(a.compressed(), b.compressed())


def test_zero_state_stays_zero():
    vo = single_mode(0.3)
    out = frozen_step(BLState.zeros(SPEC), vo, None, 1e-2)
    assert not np.any(out.compressed())


def test_solve_frozen_zero_transport_matches_linear_run():
    init = single_mode(0.5)
    a = solve_frozen(None, None, None, init, 0.02, 2e-3, project=False)
    b = run_linear_bl(init, 2e-3, 0.02)
    assert np.array_equal(a.data, b.data)


def test_zero_init_stays_zero_for_any_transport():
    vo = solve_frozen(None, None, None, single_mode(0.2), 0.02, 5e-3)
    out = solve_frozen(vo, None, None, BLState.zeros(SPEC), 0.02, 5e-3)
    assert not np.any(out.data)


def test_incompatible_transport_is_refused():
    bad = BLState.zeros(SPEC)
    ms_v = bad.v.copy()
    ms_v[0, :, 1, 0] = 1.0  # constant in eta, nonzero layer divergence
    bad = BLState(ms_v, bad.theta, SPEC)
    with pytest.raises(CompatibilityError):
        frozen_step(single_mode(), bad, None, 1e-3)


def test_horizon_beyond_window_is_refused():
    sched = tau_schedule(0.5, 1.0, 1.0, 1.0, 0.01)
    with pytest.raises(ConfigError, match="T_max"):
        solve_frozen(None, None, None, single_mode(), sched.T_max * 1.5, 1e-3, schedule=sched)
    with pytest.raises(ConfigError, match="T_max"):
        picard_fixed_point(single_mode(1.0), None, 1.0, 1e-10, 1e-2, PARAMS, C_d=1.0)


def test_zero_init_converges_in_one_iterate():
    traj, report, _ = picard_fixed_point(BLState.zeros(SPEC), None, 0.02, 1e-10, 5e-3, PARAMS, C_d=1e-3)
    assert report.iterates == 1
    assert report.final_residual == 0.0
    assert not np.any(traj.data)


def test_small_data_contracts_geometrically(converged):
    _, _, report, _ = converged
    assert report.converged
    assert report.iterates <= 12
    assert all(0 <= q < 0.8 for q in report.ratios)
    assert report.distances[-1] <= 1e-10


def test_converged_trajectory_solves_nonlinear_system(converged):
    _, traj, _, _ = converged
    res = nonlinear_residual(traj)
    assert res.max_total <= 10 * 1e-10


def test_residual_detects_perturbation(converged):
    _, traj, _, _ = converged
    base = nonlinear_residual(traj).max_total
    rng = np.random.default_rng(3)
    noisy = traj.data + 1e-3 * (rng.standard_normal(traj.data.shape) + 1j * rng.standard_normal(traj.data.shape))
    bumped = nonlinear_residual(Trajectory(SPEC, traj.times, noisy)).max_total
    assert bumped >= 10 * max(base, 1e-14)


def test_fixed_point_consistency(converged):
    init, traj, _, schedule = converged
    again = solve_frozen(traj, None, None, init, 0.05, 5e-3, schedule)
    dist = MetricEvaluator(SPEC, schedule, PARAMS).distance(again.data - traj.data)
    assert dist <= 1e-10


def test_compatibility_held_along_iterates(converged):
    _, traj, _, _ = converged
    assert compatibility_history(traj).max() <= 1e-10


def test_first_ratio_monotone_in_size():
    ratios = []
    for a, T in ((2e-2, 0.04), (1e-2, 0.02)):
        _, rep, _ = picard_fixed_point(single_mode(a), None, T, 1e-12, 2.5e-3, PARAMS, C_d=1e-3)
        ratios.append(rep.ratios[0])
    assert ratios[1] <= ratios[0]


def test_residual_zero_and_short_input():
    zero = Trajectory.zeros(SPEC, np.arange(6) * 0.01)
    assert nonlinear_residual(zero).max_total == 0.0
    with pytest.raises(ConfigError):
        nonlinear_residual(Trajectory.zeros(SPEC, np.arange(4) * 0.01))


def test_stalling_iteration_raises_with_report():
    with pytest.raises(DivergenceError) as err:
        picard_fixed_point(single_mode(5.0, k=(2, 1)), None, 0.03, 1e-14, 5e-3, PARAMS, C_d=1e-6, max_iter=2)
    assert err.value.report.iterates >= 1


def test_constant_forcing_advects_state():
    V = np.zeros((2,) + SPEC.shape_spectral, complex)
    V[0, 0, 0] = 0.5  # uniform drift in x
    forcing = BLForcing.constant(SPEC, V)
    s = single_mode(1e-3)
    moved = frozen_step(s, None, forcing, 1e-2)
    still = frozen_step(s, None, None, 1e-2)
    assert not np.allclose(moved.compressed(), still.compressed())
    assert np.isclose(np.linalg.norm(moved.compressed()), np.linalg.norm(still.compressed()), rtol=1e-6)


def test_frozen_step_matches_collocation_of_frozen_system():
    from oracles import CollocationLayer

    from stratlayer.grids import inverse_transform

    spec = GridSpec(Nx=8, Ny=8, Neta=129, L_eta=8.0)
    s = single_mode(0.1, spec)
    dt = 5e-3
    phys = [inverse_transform(f, spec) for f in (s.v[0], s.v[1], s.theta)]
    ref = CollocationLayer(8, 8, 129, 8.0).solve(phys, dt, frozen=(phys[0], phys[1]))
    out = frozen_step(s, s, None, dt, project=False)
    got = [inverse_transform(f, spec) for f in (out.v[0], out.v[1], out.theta)]
    increment = np.sqrt(sum(np.sum((r - p) ** 2) for r, p in zip(ref, phys)))
    err = np.sqrt(sum(np.sum((g - r) ** 2) for g, r in zip(got, ref)))
    assert err / increment < 1e-4
