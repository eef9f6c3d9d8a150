"""Nonlinear boundary layer by frozen-transport Picard iteration.

Given an "old" velocity ``v_o`` (and ``w_o = -int_0^eta div_h v_o``) the
frozen system is linear in the unknowns:

    v_t + (V + v_o).grad v + w_o v_eta + v.grad V - i k int_eta^L theta = 0,
    theta_t + (V + v_o).grad theta + w_o theta_eta - int_0^eta div_h v = 0,

where ``V(x, y, t)`` is the bulk trace.  The map ``v_o -> v`` is iterated from
``v_o = 0`` until the change between iterates, measured in the contraction
metric built from the analytic norms, drops below the tolerance.

Products are formed on the physical grid and truncated to the retained modes
(2/3 rule); ``eta``-derivatives use 4th-order finite differences.  With
``project=True`` every stage tendency of ``v`` has the depth-constant
component along ``k`` removed, which keeps the layer-integrated divergence at
zero; this is a depth-independent pressure gradient and is recovered as such
by :func:`nonlinear_residual`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boundary_layer import (
    BLState,
    Trajectory,
    compat_integral,
    expand,
    linear_rhs,
    mode_set,
    n_steps_for,
    require_compatible,
    rk4_step,
    time_derivative,
)
from .errors import ConfigError, DivergenceError
from .grids import TORUS_AREA, GridSpec, eta_derivative, eta_integral_up
from .norms import NormParams, TauSchedule, contraction_metric, semi_norm_table_modes, tau_schedule, x_from_table


# --------------------------------------------------------------------------
# bulk trace forcing
# --------------------------------------------------------------------------


@dataclass
class BLForcing:
    """Horizontal bulk trace ``V`` sampled in time (compressed: ``(Nt, 2, n_modes)``).

    ``None`` samples mean ``V = 0``.  Between samples ``V`` is interpolated
    linearly; outside the sampled range it is held constant.
    """

    spec: GridSpec
    times: np.ndarray | None = None
    samples: np.ndarray | None = None

    @classmethod
    def zero(cls, spec: GridSpec) -> "BLForcing":
        return cls(spec)

    @classmethod
    def constant(cls, spec: GridSpec, V_full: np.ndarray) -> "BLForcing":
        """Time-independent trace from full-layout coefficients ``(2, Nx, Nyh)``."""
        ms = mode_set(spec)
        comp = np.asarray(V_full, dtype=complex)[..., ms.ix, ms.iy]
        return cls(spec, np.array([0.0]), comp[None])

    @property
    def is_zero(self) -> bool:
        return self.samples is None or not np.any(self.samples)

    def at(self, t: float) -> np.ndarray | None:
        if self.samples is None:
            return None
        if len(self.times) == 1:
            return self.samples[0]
        t = min(max(t, self.times[0]), self.times[-1])
        j = int(np.clip(np.searchsorted(self.times, t) - 1, 0, len(self.times) - 2))
        lam = (t - self.times[j]) / (self.times[j + 1] - self.times[j])
        return (1 - lam) * self.samples[j] + lam * self.samples[j + 1]


# --------------------------------------------------------------------------
# physical-space kernels on compressed arrays
# --------------------------------------------------------------------------


class _Physical:
    """Moves compressed mode arrays to the physical grid and back."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.ms = mode_set(spec)

    def to_phys(self, comp: np.ndarray) -> np.ndarray:
        return np.fft.irfft2(expand(comp, self.spec), s=self.spec.shape_physical, norm="forward")

    def to_modes(self, phys: np.ndarray) -> np.ndarray:
        c = np.fft.rfft2(phys, norm="forward")
        return c[..., self.ms.ix, self.ms.iy]

    def grad(self, comp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.to_phys(1j * self.ms.kx * comp), self.to_phys(1j * self.ms.ky * comp)


def frozen_w(vo: np.ndarray, spec: GridSpec) -> np.ndarray:
    ms = mode_set(spec)
    div = 1j * (ms.kx * vo[0] + ms.ky * vo[1])
    return -eta_integral_up(div, spec.h_eta, axis=0)


def transport_terms(y: np.ndarray, vo: np.ndarray | None, V: np.ndarray | None, spec: GridSpec, ops: _Physical | None = None) -> np.ndarray:
    """``((V + v_o).grad f + w_o f_eta)`` for each component, plus ``v.grad V`` on the velocity.

    ``y`` is ``(3, Neta, n)``, ``vo`` is ``(2, Neta, n)`` and ``V`` is ``(2, n)``.
    Returns compressed, dealiased coefficients shaped like ``y``.
    """
    ops = ops or _Physical(spec)
    shape = (spec.Neta,) + spec.shape_physical
    ux = np.zeros(shape)
    uy = np.zeros(shape)
    wo = None
    if vo is not None:
        ux = ux + ops.to_phys(vo[0])
        uy = uy + ops.to_phys(vo[1])
        wo = ops.to_phys(frozen_w(vo, spec))
    if V is not None:
        Vphys = ops.to_phys(V)
        ux = ux + Vphys[0]
        uy = uy + Vphys[1]
    y_eta = eta_derivative(y, spec.h_eta, axis=1) if wo is not None else None
    out_phys = np.empty((3,) + shape)
    for c in range(3):
        fx, fy = ops.grad(y[c])
        acc = ux * fx + uy * fy
        if wo is not None:
            acc = acc + wo * ops.to_phys(y_eta[c])
        out_phys[c] = acc
    if V is not None:
        vx, vy = ops.to_phys(y[0]), ops.to_phys(y[1])
        for c in range(2):
            gx, gy = ops.grad(V[c])
            out_phys[c] += vx * gx + vy * gy
    return ops.to_modes(out_phys)


def project_tendency(dy: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Remove the depth-constant part of ``dv`` along ``k`` (a depth-independent pressure gradient)."""
    ms = mode_set(spec)
    total = eta_integral_up(dy[:2], spec.h_eta, axis=1)[:, -1]
    kdot = ms.kx * total[0] + ms.ky * total[1]
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(ms.k2 > 0, kdot / (ms.k2 * spec.L_eta), 0.0)
    out = dy.copy()
    out[0] -= ms.kx * c
    out[1] -= ms.ky * c
    return out


def frozen_rhs(y, vo, V, spec: GridSpec, project: bool, ops=None) -> np.ndarray:
    """Frozen tendency; unprojected and without transport it is exactly the linear one."""
    if vo is None and V is None and not project:
        return linear_rhs(y, spec)
    rhs = linear_rhs(y, spec) - transport_terms(y, vo, V, spec, ops)
    return project_tendency(rhs, spec) if project else rhs


# --------------------------------------------------------------------------
# frozen steps and solves
# --------------------------------------------------------------------------


def _check_transport(vo: np.ndarray | None, spec: GridSpec, what: str):
    if vo is None or not np.any(vo):
        return
    y = np.concatenate([vo, np.zeros((1,) + vo.shape[1:], vo.dtype)])
    require_compatible(y, spec, what=what)


def frozen_step(
    state: BLState,
    vo: BLState | None,
    forcing: BLForcing | None,
    dt: float,
    project: bool = True,
) -> BLState:
    """One RK4 step with the transport field ``vo`` held fixed over the step."""
    if not dt > 0:
        raise ConfigError(f"time step must be positive, got {dt}")
    spec = state.spec
    vo_c = None if vo is None else vo.compressed()[:2]
    if vo_c is not None and not np.any(vo_c):
        vo_c = None
    _check_transport(vo_c, spec, "transport field")
    ops = _Physical(spec)
    forcing = forcing or BLForcing.zero(spec)

    def rhs(y, t):
        return frozen_rhs(y, vo_c, forcing.at(t), spec, project, ops)

    y = rk4_step(rhs, state.compressed(), state.t, dt)
    return BLState.from_compressed(y, spec, state.t + dt)


def _stage_interpolator(traj: Trajectory | None, dt: float, t0: float):
    """Frozen field at any stage time: 4-point Lagrange interpolation of the samples."""
    if traj is None:
        return lambda t: None
    times = traj.times
    n = len(times)
    if n > 1 and not np.allclose(np.diff(times), dt, rtol=1e-9, atol=1e-15):
        raise ConfigError("frozen trajectory must be sampled at the solver step")
    vo = traj.data[:, :2]

    def at(t):
        x = (t - t0) / dt
        j = int(round(x))
        if abs(x - j) < 1e-9 and 0 <= j < n:
            return vo[j]
        if n < 4:
            j = int(np.clip(np.floor(x), 0, n - 2))
            lam = x - j
            return (1 - lam) * vo[j] + lam * vo[j + 1]
        start = int(np.clip(np.floor(x) - 1, 0, n - 4))
        nodes = np.arange(start, start + 4)
        weights = []
        for a in nodes:
            others = nodes[nodes != a]
            weights.append(np.prod((x - others) / (a - others)))
        return sum(w * vo[a] for w, a in zip(weights, nodes))

    return at


def solve_frozen(
    vo_trajectory: Trajectory | None,
    theta_o_trajectory,
    forcing: BLForcing | None,
    init: BLState,
    T: float,
    dt: float,
    schedule: TauSchedule | None = None,
    project: bool = True,
) -> Trajectory:
    """Trajectory of the frozen system on ``[0, T]`` sampled at every step.

    ``theta_o_trajectory`` is accepted for symmetry with the map ``(v_o, theta_o)
    -> (v, theta)``; the old temperature does not enter the frozen equations.
    With a ``schedule``, horizons past its validity window are refused.
    """
    spec = init.spec
    if schedule is not None and T > schedule.T_max * (1 + 1e-12):
        raise ConfigError(
            f"horizon T={T:g} exceeds the analyticity window T_max={schedule.T_max:.4g} "
            f"(tau would fall below tau0/2={schedule.tau0 / 2:g})"
        )
    n_steps = n_steps_for(T, dt)
    if vo_trajectory is not None:
        if len(vo_trajectory) != n_steps + 1:
            raise ConfigError(f"frozen trajectory has {len(vo_trajectory)} samples, expected {n_steps + 1}")
        for n in (0, len(vo_trajectory) - 1):
            _check_transport(vo_trajectory.data[n, :2], spec, "transport trajectory")
    vo_at = _stage_interpolator(vo_trajectory, dt, init.t)
    forcing = forcing or BLForcing.zero(spec)
    ops = _Physical(spec)

    def rhs(y, t):
        return frozen_rhs(y, vo_at(t), forcing.at(t), spec, project, ops)

    y = init.compressed()
    data = np.empty((n_steps + 1,) + y.shape, dtype=complex)
    data[0] = y
    for n in range(n_steps):
        y = rk4_step(rhs, y, init.t + n * dt, dt)
        data[n + 1] = y
    times = init.t + dt * np.arange(n_steps + 1)
    return Trajectory(spec, times, data)


# --------------------------------------------------------------------------
# Picard iteration
# --------------------------------------------------------------------------


@dataclass
class ContractionReport:
    iterates: int = 0
    distances: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    l2_distances: list = field(default_factory=list)
    final_residual: float | None = None
    converged: bool = False
    tau0: float | None = None
    T_max: float | None = None
    M_data: float | None = None

    def record(self, distance: float, l2: float):
        if self.distances and self.distances[-1] > 0:
            self.ratios.append(distance / self.distances[-1])
        self.distances.append(float(distance))
        self.l2_distances.append(float(l2))
        self.iterates = len(self.distances)
        self.final_residual = float(distance)

    def as_dict(self) -> dict:
        return {
            "iterates": self.iterates,
            "distances": self.distances,
            "ratios": self.ratios,
            "l2_distances": self.l2_distances,
            "final_residual": self.final_residual,
            "converged": self.converged,
            "tau0": self.tau0,
            "T_max": self.T_max,
            "M_data": self.M_data,
        }


def trajectory_l2(traj_data: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Discrete ``L2(T^2 x [0, L])`` norm of every sample (all components)."""
    ms = mode_set(spec)
    p = np.sum(np.abs(traj_data) ** 2, axis=1)
    per_mode = np.trapezoid(p, dx=spec.h_eta, axis=1)
    return np.sqrt(TORUS_AREA * per_mode @ ms.weights)


class MetricEvaluator:
    """Contraction-metric distance between trajectories sampled on the schedule grid."""

    def __init__(self, spec: GridSpec, schedule: TauSchedule, params: NormParams):
        self.spec = spec
        self.schedule = schedule
        self.params = params
        ms = mode_set(spec)
        self._modes = (ms.kx, ms.ky, ms.weights)

    def tables(self, data: np.ndarray) -> np.ndarray:
        kx, ky, wts = self._modes
        return np.array(
            [semi_norm_table_modes(y, kx, ky, wts, self.spec.h_eta, self.params.d, self.params.M) for y in data]
        )

    def distance(self, data: np.ndarray) -> float:
        return contraction_metric(self.tables(data), self.schedule, self.params.r)


def data_norm(init: BLState, params: NormParams, tau0: float) -> float:
    """``M = ||v_in, theta_in||_{X_tau0}`` (truncated at order ``params.M``)."""
    ms = mode_set(init.spec)
    table = semi_norm_table_modes(init.compressed(), ms.kx, ms.ky, ms.weights, init.spec.h_eta, params.d, params.M)
    return x_from_table(table, tau0, params.r).value


def picard_fixed_point(
    init: BLState,
    forcing: BLForcing | None,
    T: float,
    tol: float,
    dt: float,
    params: NormParams | None = None,
    tau0: float | None = None,
    C_d: float = 1.0,
    max_iter: int = 30,
    project: bool = True,
    stall_count: int = 3,
):
    """Iterate the frozen-transport map from ``v_o = 0`` to its fixed point.

    Returns ``(trajectory, report, schedule)``.  Stops when the contraction
    metric of the change between consecutive iterates is ``<= tol``.  Raises
    :class:`DivergenceError` (report attached) when the distance fails to
    decrease ``stall_count`` times in a row or ``max_iter`` is reached.
    """
    spec = init.spec
    params = params or NormParams()
    tau0 = params.tau if tau0 is None else tau0
    y0 = init.compressed()
    require_compatible(y0, spec, what="initial data")
    M_data = data_norm(init, params, tau0)
    n_steps = n_steps_for(T, dt)
    times = init.t + dt * np.arange(n_steps + 1)
    schedule = tau_schedule(tau0, C_d, M_data, params.d, T, times=times - init.t)
    report = ContractionReport(tau0=tau0, T_max=schedule.T_max, M_data=M_data)
    if schedule.truncated:
        raise ConfigError(
            f"horizon T={T:g} exceeds the analyticity window T_max={schedule.T_max:.4g} "
            f"for data norm M={M_data:.4g}, C_d={C_d:g}, tau0={tau0:g}"
        )
    metric = MetricEvaluator(spec, schedule, params)
    current = solve_frozen(None, None, forcing, init, T, dt, schedule, project)
    stalls = 0
    for _ in range(max_iter):
        new = solve_frozen(current, None, forcing, init, T, dt, schedule, project)
        delta = new.data - current.data
        dist = metric.distance(delta)
        l2 = float(np.max(trajectory_l2(delta, spec)))
        previous = report.distances[-1] if report.distances else None
        report.record(dist, l2)
        current = new
        del delta
        if dist <= tol:
            report.converged = True
            return current, report, schedule
        if previous is not None and dist >= previous:
            stalls += 1
            if stalls >= stall_count:
                raise DivergenceError(
                    f"Picard distances failed to decrease {stall_count} times in a row "
                    f"(last {dist:.3e}); shorten T or reduce the data", report
                )
        else:
            stalls = 0
    raise DivergenceError(f"no convergence to tol={tol:g} within {max_iter} iterates", report)


# --------------------------------------------------------------------------
# residual of the full nonlinear system
# --------------------------------------------------------------------------


@dataclass
class ResidualSeries:
    times: np.ndarray
    velocity: np.ndarray
    temperature: np.ndarray
    pressure_correction: np.ndarray = field(repr=False, default=None)

    @property
    def total(self) -> np.ndarray:
        return np.sqrt(self.velocity**2 + self.temperature**2)

    @property
    def max_total(self) -> float:
        return float(np.max(self.total, initial=0.0))


def nonlinear_residual(traj: Trajectory, forcing: BLForcing | None = None) -> ResidualSeries:
    """Discrete L2 residual of the self-transported (fully nonlinear) layer equations.

    Time derivatives come from a 4th-order stencil over the samples.  The
    pressure is ``p = pi + int_0^eta theta``; writing ``pi = -int_0^L theta + pi'``,
    the depth-independent ``pi'`` is the least-squares fit of the velocity
    residual per mode (the gradient that keeps the layer compatible).
    """
    spec = traj.spec
    if len(traj) < 5:
        raise ConfigError(f"need at least 5 samples for the time stencil, got {len(traj)}")
    dts = np.diff(traj.times)
    if not np.allclose(dts, dts[0], rtol=1e-9):
        raise ConfigError("residual needs uniformly sampled trajectories")
    forcing = forcing or BLForcing.zero(spec)
    ms = mode_set(spec)
    ops = _Physical(spec)
    dydt = time_derivative(traj.data, dts[0])
    rv = np.empty(len(traj))
    rt = np.empty(len(traj))
    pis = np.empty((len(traj), ms.size), complex)
    for n, t in enumerate(traj.times):
        y = traj.data[n]
        r = dydt[n] - (linear_rhs(y, spec) - transport_terms(y, y[:2], forcing.at(t), spec, ops))
        mean = eta_integral_up(r[:2], spec.h_eta, axis=1)[:, -1] / spec.L_eta
        with np.errstate(invalid="ignore", divide="ignore"):
            pi = np.where(ms.k2 > 0, 1j * (ms.kx * mean[0] + ms.ky * mean[1]) / ms.k2, 0.0)
        r[0] += 1j * ms.kx * pi
        r[1] += 1j * ms.ky * pi
        pis[n] = pi
        norms = np.trapezoid(np.abs(r) ** 2, dx=spec.h_eta, axis=1) @ ms.weights
        rv[n] = np.sqrt(TORUS_AREA * (norms[0] + norms[1]))
        rt[n] = np.sqrt(TORUS_AREA * norms[2])
    return ResidualSeries(traj.times, rv, rt, pis)


def compatibility_history(traj: Trajectory) -> np.ndarray:
    return np.array([np.max(np.abs(compat_integral(y, traj.spec)), initial=0.0) for y in traj.data])
