"""Linear boundary layer on the half line and its finite-depth (iota) approximation.

Per horizontal mode ``k`` the half-line system reads

    v_t = i k  int_eta^L theta ds,        theta_t = int_0^eta i k . v ds,

and the finite-depth system replaces the tail integral by a depth-independent
pressure fixed by the lid condition:

    v_t = -i k (pi + int_0^eta theta ds),  pi = -(1/L) int_0^L int_0^eta theta ds deta.

The vertical velocity is always derived, ``w = -int_0^eta i k . v ds``.

Internally the solvers work on "compressed" arrays that keep only the retained
(dealiased) modes: shape ``(3, Neta, n_modes)`` with components
``(v_x, v_y, theta)``.  :class:`BLState` stores the full rfft2 layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.integrate import cumulative_simpson

from .errors import CompatibilityError, ConfigError
from .grids import (
    TORUS_AREA,
    GridSpec,
    SpectralField2D,
    eta_average,
    eta_derivative,
    eta_difference,
    eta_integral_up,
    forward_transform,
    physical_grid,
)

COMPAT_RTOL = 1e-10


# --------------------------------------------------------------------------
# retained-mode bookkeeping
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModeSet:
    ix: np.ndarray
    iy: np.ndarray
    kx: np.ndarray
    ky: np.ndarray
    k2: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return len(self.ix)


@lru_cache(maxsize=32)
def mode_set(spec: GridSpec) -> ModeSet:
    ix, iy = np.nonzero(spec.mask)
    kx = spec.kx[ix, 0].astype(float)
    ky = spec.ky[0, iy].astype(float)
    return ModeSet(ix, iy, kx, ky, kx**2 + ky**2, spec.weights[ix, iy])


def compress(full: np.ndarray, spec: GridSpec) -> np.ndarray:
    ms = mode_set(spec)
    return np.asarray(full)[..., ms.ix, ms.iy]


def expand(comp: np.ndarray, spec: GridSpec) -> np.ndarray:
    ms = mode_set(spec)
    out = np.zeros(comp.shape[:-1] + spec.shape_spectral, dtype=complex)
    out[..., ms.ix, ms.iy] = comp
    return out


# --------------------------------------------------------------------------
# state
# --------------------------------------------------------------------------


@dataclass
class BLState:
    """Layer profiles per mode: ``v`` is ``(2, Neta, Nx, Nyh)``, ``theta`` is ``(Neta, Nx, Nyh)``."""

    v: np.ndarray
    theta: np.ndarray
    spec: GridSpec
    t: float = 0.0

    def __post_init__(self):
        shape = (self.spec.Neta,) + self.spec.shape_spectral
        self.v = np.asarray(self.v, dtype=complex)
        self.theta = np.asarray(self.theta, dtype=complex)
        if self.v.shape != (2,) + shape or self.theta.shape != shape:
            raise ConfigError(f"BLState arrays {self.v.shape}, {self.theta.shape} do not match grid {shape}")

    @classmethod
    def zeros(cls, spec: GridSpec, t: float = 0.0) -> "BLState":
        shape = (spec.Neta,) + spec.shape_spectral
        return cls(np.zeros((2,) + shape, complex), np.zeros(shape, complex), spec, t)

    @classmethod
    def from_compressed(cls, y: np.ndarray, spec: GridSpec, t: float = 0.0) -> "BLState":
        full = expand(y, spec)
        return cls(full[:2], full[2], spec, t)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.v, self.theta[None]], axis=0)

    def compressed(self) -> np.ndarray:
        return compress(self.stacked(), self.spec)

    def copy(self) -> "BLState":
        return BLState(self.v.copy(), self.theta.copy(), self.spec, self.t)

    def with_time(self, t: float) -> "BLState":
        return replace(self, t=t)

    def __add__(self, other: "BLState") -> "BLState":
        return BLState(self.v + other.v, self.theta + other.theta, self.spec, self.t)

    def __sub__(self, other: "BLState") -> "BLState":
        return BLState(self.v - other.v, self.theta - other.theta, self.spec, self.t)

    def __mul__(self, c) -> "BLState":
        return BLState(c * self.v, c * self.theta, self.spec, self.t)

    __rmul__ = __mul__


# --------------------------------------------------------------------------
# compressed-array kernels
# --------------------------------------------------------------------------


def _div(v: np.ndarray, ms: ModeSet) -> np.ndarray:
    return 1j * (ms.kx * v[0] + ms.ky * v[1])


def _up(f: np.ndarray, h: float) -> np.ndarray:
    return eta_integral_up(f, h, axis=0)


def _tail(f: np.ndarray, h: float) -> np.ndarray:
    up = _up(f, h)
    return up[-1] - up


def compat_integral(y: np.ndarray, spec: GridSpec) -> np.ndarray:
    """``int_0^L i k . v deta`` per retained mode."""
    ms = mode_set(spec)
    return _up(_div(y[:2], ms), spec.h_eta)[-1]


def compat_scale(y: np.ndarray, spec: GridSpec) -> float:
    ms = mode_set(spec)
    mag = np.sqrt(ms.k2) * np.sqrt(np.abs(y[0]) ** 2 + np.abs(y[1]) ** 2)
    return float(np.max(_up(mag, spec.h_eta)[-1], initial=0.0))


def project_compat(y: np.ndarray, spec: GridSpec, profile: np.ndarray | None = None) -> np.ndarray:
    """Rank-one correction of ``v`` along ``k`` that zeroes the compatibility integral.

    The correction profile defaults to the constant (the depth mean is removed);
    a decaying ``profile`` keeps initial data decaying at the lid.
    """
    ms = mode_set(spec)
    if profile is None:
        profile = np.ones(spec.Neta)
    profile = np.asarray(profile, dtype=float) / eta_integral_up(profile, spec.h_eta)[-1]
    total = eta_integral_up(y[:2], spec.h_eta, axis=1)[:, -1]
    kdot = ms.kx * total[0] + ms.ky * total[1]
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(ms.k2 > 0, kdot / ms.k2, 0.0)
    out = y.copy()
    out[0] -= ms.kx * c * profile[:, None]
    out[1] -= ms.ky * c * profile[:, None]
    return out


def linear_rhs(y: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Half-line layer operator: ``(i k T theta, U (i k . v))``."""
    ms = mode_set(spec)
    h = spec.h_eta
    out = np.empty_like(y)
    tail = _tail(y[2], h)
    out[0] = 1j * ms.kx * tail
    out[1] = 1j * ms.ky * tail
    out[2] = _up(_div(y[:2], ms), h)
    return out


def iota_pressure(y: np.ndarray, spec: GridSpec) -> np.ndarray:
    """``pi = -(1/L) int_0^L int_0^eta theta`` per retained mode; zero for ``k = 0``."""
    ms = mode_set(spec)
    h = spec.h_eta
    pi = -_up(_up(y[2], h), h)[-1] / spec.L_eta
    return np.where(ms.k2 > 0, pi, 0.0)


def iota_rhs(y: np.ndarray, spec: GridSpec) -> np.ndarray:
    ms = mode_set(spec)
    h = spec.h_eta
    out = np.empty_like(y)
    grad_part = iota_pressure(y, spec) + _up(y[2], h)
    out[0] = -1j * ms.kx * grad_part
    out[1] = -1j * ms.ky * grad_part
    out[2] = _up(_div(y[:2], ms), h)
    return out


def rk4_step(rhs, y: np.ndarray, t: float, dt: float) -> np.ndarray:
    """Classical RK4; ``rhs(y, t)``."""
    k1 = rhs(y, t)
    k2 = rhs(y + (0.5 * dt) * k1, t + 0.5 * dt)
    k3 = rhs(y + (0.5 * dt) * k2, t + 0.5 * dt)
    k4 = rhs(y + dt * k3, t + dt)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# --------------------------------------------------------------------------
# public operations
# --------------------------------------------------------------------------


@dataclass
class WProfile:
    w: np.ndarray
    compat_residual: float
    flagged: bool


def w_from_v(state: BLState, rtol: float = COMPAT_RTOL) -> WProfile:
    """``w = -int_0^eta div_h v``; flags (does not raise on) a nonzero top value."""
    spec = state.spec
    kx, ky = spec.kx, spec.ky
    div = 1j * (kx * state.v[0] + ky * state.v[1])
    w = -eta_integral_up(div, spec.h_eta, axis=0)
    residual = float(np.max(np.abs(w[-1]), initial=0.0))
    scale = compat_scale(state.compressed(), spec)
    return WProfile(w, residual, bool(residual > rtol * max(scale, 1e-300)))


def compatibility_residual(state: BLState) -> float:
    return float(np.max(np.abs(compat_integral(state.compressed(), state.spec)), initial=0.0))


def decay_flag(state: BLState, threshold: float = 1e-10) -> bool:
    """True when the profiles have NOT decayed at ``L_eta`` (relative to their sup)."""
    edge = np.abs(state.v[:, -1]).sum(axis=0) + np.abs(state.theta[-1])
    sup = max(float(np.max(np.abs(state.v), initial=0.0)), float(np.max(np.abs(state.theta), initial=0.0)))
    return bool(sup > 0 and np.max(edge) > threshold * sup)


def project_compatible(state: BLState, profile: np.ndarray | None = None) -> BLState:
    y = project_compat(state.compressed(), state.spec, profile)
    return BLState.from_compressed(y, state.spec, state.t)


def solve_iota_pressure(state: BLState) -> SpectralField2D:
    pi = iota_pressure(state.compressed(), state.spec)
    return SpectralField2D(expand(pi, state.spec), state.spec)


def _check_dt(dt):
    if not dt > 0:
        raise ConfigError(f"time step must be positive, got {dt}")


def step_linear_bl(state: BLState, dt: float) -> BLState:
    """One RK4 step of the half-line system (non-retained modes are dropped)."""
    _check_dt(dt)
    spec = state.spec
    y = rk4_step(lambda z, _t: linear_rhs(z, spec), state.compressed(), state.t, dt)
    return BLState.from_compressed(y, spec, state.t + dt)


def require_compatible(y: np.ndarray, spec: GridSpec, rtol: float = COMPAT_RTOL, what: str = "state"):
    residual = float(np.max(np.abs(compat_integral(y, spec)), initial=0.0))
    scale = compat_scale(y, spec)
    if residual > rtol * max(scale, 1e-300) and residual > 0:
        raise CompatibilityError(
            f"{what}: layer-integrated divergence {residual:.3e} exceeds {rtol:g} x scale {scale:.3e}"
        )


def step_iota_linear(state: BLState, dt: float, rtol: float = COMPAT_RTOL) -> BLState:
    """One RK4 step of the finite-depth system; refuses incompatible data."""
    _check_dt(dt)
    spec = state.spec
    y0 = state.compressed()
    require_compatible(y0, spec, rtol)
    y = rk4_step(lambda z, _t: iota_rhs(z, spec), y0, state.t, dt)
    return BLState.from_compressed(y, spec, state.t + dt)


# --------------------------------------------------------------------------
# energies
# --------------------------------------------------------------------------


def _mode_sum(power: np.ndarray, spec: GridSpec) -> float:
    return float(TORUS_AREA * np.sum(mode_set(spec).weights * power))


def nodal_energy(y: np.ndarray, spec: GridSpec) -> float:
    """``int (|v|^2 + theta^2)`` with trapezoid in eta and Parseval on the torus."""
    p = np.sum(np.abs(y) ** 2, axis=0)
    return _mode_sum(np.trapezoid(p, dx=spec.h_eta, axis=0), spec)


def discrete_energy(y: np.ndarray, spec: GridSpec) -> float:
    """Half-node energy ``sum h |A f|^2``: the quadratic form conserved by both layer operators."""
    a = eta_average(y, axis=1)
    return _mode_sum(spec.h_eta * np.sum(np.abs(a) ** 2, axis=(0, 1)), spec)


def gradient_energy(y: np.ndarray, spec: GridSpec, order: int = 1) -> float:
    """``||d_eta^order (v, theta)||^2``.

    Order 1 uses half-node differences, which makes the boundary-term identity
    hold exactly in space; higher orders use 4th-order finite differences.
    """
    if order == 1:
        d = eta_difference(y, spec.h_eta, axis=1)
        return _mode_sum(spec.h_eta * np.sum(np.abs(d) ** 2, axis=(0, 1)), spec)
    d = eta_derivative(y, spec.h_eta, deriv=order, axis=1)
    return _mode_sum(np.trapezoid(np.sum(np.abs(d) ** 2, axis=0), dx=spec.h_eta, axis=0), spec)


def boundary_flux(y: np.ndarray, spec: GridSpec, order: int = 1) -> float:
    """Predicted ``d/dt ||d_eta^order (v,theta)||^2``.

    Equals ``-2 int_T2 (d^(order-1) theta div d^(order-1) v)|_(eta=0)`` plus the
    matching top-lid term (which vanishes for decaying data).
    """
    ms = mode_set(spec)
    if order == 1:
        g = ms.kx * y[0] + ms.ky * y[1]
        th = y[2]
    else:
        d = eta_derivative(y, spec.h_eta, deriv=order - 1, axis=1)
        g = ms.kx * d[0] + ms.ky * d[1]
        th = d[2]
    bottom = np.real(1j * g[0] * np.conj(th[0]))
    top = np.real(1j * g[-1] * np.conj(th[-1]))
    return _mode_sum(2.0 * (top - bottom), spec)


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------


@dataclass
class Trajectory:
    """Samples of a layer solution in compressed form: ``data`` is ``(Nt, 3, Neta, n_modes)``."""

    spec: GridSpec
    times: np.ndarray
    data: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    def state(self, n: int) -> BLState:
        return BLState.from_compressed(self.data[n], self.spec, float(self.times[n]))

    def final(self) -> BLState:
        return self.state(len(self) - 1)

    def stacked_full(self, n: int) -> np.ndarray:
        return expand(self.data[n], self.spec)

    def __sub__(self, other: "Trajectory") -> "Trajectory":
        if len(self) != len(other) or not np.allclose(self.times, other.times):
            raise ConfigError("trajectories are sampled on different time grids")
        return Trajectory(self.spec, self.times, self.data - other.data)

    @classmethod
    def zeros(cls, spec: GridSpec, times) -> "Trajectory":
        times = np.asarray(times, dtype=float)
        return cls(spec, times, np.zeros((len(times), 3, spec.Neta, mode_set(spec).size), complex))


def integrate(rhs, y0: np.ndarray, spec: GridSpec, dt: float, n_steps: int, stride: int = 1, t0: float = 0.0, post=None) -> Trajectory:
    """Run RK4 and keep every ``stride``-th sample (including the first and last)."""
    _check_dt(dt)
    keep = list(range(0, n_steps + 1, stride))
    if keep[-1] != n_steps:
        keep.append(n_steps)
    data = np.empty((len(keep),) + y0.shape, dtype=complex)
    times = np.empty(len(keep))
    y = y0
    slot = 0
    for n in range(n_steps + 1):
        if n > 0:
            y = rk4_step(rhs, y, t0 + (n - 1) * dt, dt)
            if post is not None:
                y = post(y)
        if slot < len(keep) and keep[slot] == n:
            data[slot] = y
            times[slot] = t0 + n * dt
            slot += 1
    return Trajectory(spec, times, data)


def n_steps_for(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ConfigError(f"horizon T={T} is not a whole number of steps dt={dt}")
    return n


def run_linear_bl(init: BLState, dt: float, T: float, system: str = "half-line", stride: int = 1) -> Trajectory:
    spec = init.spec
    y0 = init.compressed()
    if system == "half-line":
        rhs = lambda z, _t: linear_rhs(z, spec)
    elif system == "iota":
        require_compatible(y0, spec)
        rhs = lambda z, _t: iota_rhs(z, spec)
    else:
        raise ConfigError(f"unknown layer system {system!r}")
    return integrate(rhs, y0, spec, dt, n_steps_for(T, dt), stride, t0=init.t)


def auto_dt(spec: GridSpec, c: float = 0.25) -> float:
    return c / (spec.kmag_max * max(1.0, spec.L_eta))


def time_derivative(samples: np.ndarray, dt: float) -> np.ndarray:
    """Fourth-order finite-difference time derivative of uniformly spaced samples (axis 0)."""
    n = len(samples)
    if n < 5:
        raise ConfigError(f"need at least 5 samples for the 4th-order time stencil, got {n}")
    return eta_derivative(samples, dt, deriv=1, order=4, axis=0)


@dataclass
class EnergyIdentityReport:
    times: np.ndarray
    energy: np.ndarray
    rate: np.ndarray
    flux: np.ndarray
    residual: np.ndarray
    growth_constant: float | None
    hk_norm: np.ndarray = field(repr=False, default=None)
    rate_residual: np.ndarray = field(repr=False, default=None)

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residual), initial=0.0))


def energy_identity_report(traj: Trajectory, k_order: int = 1) -> EnergyIdentityReport:
    """Residual of ``d/dt ||d^k (v,theta)||^2 + 2 int (d^(k-1) theta div d^(k-1) v)|_0 = 0``.

    ``residual`` is the time-integrated form ``E(t) - E(0) - int_0^t flux``
    (cumulative Simpson), which avoids dividing round-off by the step;
    ``rate_residual`` compares a 4th-order difference of ``E`` with the flux
    pointwise.  For ``k = 1`` the spatial identity is exact, so both measure
    the time-integration error only; for ``k >= 2`` an ``O(h^2)`` spatial part
    from the trapezoid layer integrals remains.  Also fits ``C_k`` with
    ``H^k(t) <= exp(C_k t) H^k(0)``.
    """
    if k_order < 1:
        raise ConfigError(f"k_order must be >= 1, got {k_order}")
    spec = traj.spec
    dts = np.diff(traj.times)
    if len(dts) == 0 or not np.allclose(dts, dts[0], rtol=1e-9):
        raise ConfigError("energy identity needs uniformly sampled output times")
    energy = np.array([gradient_energy(y, spec, k_order) for y in traj.data])
    flux = np.array([boundary_flux(y, spec, k_order) for y in traj.data])
    rate = time_derivative(energy, dts[0])
    residual = energy - energy[0] - cumulative_simpson(flux, dx=dts[0], initial=0.0)
    hk = np.zeros(len(traj))
    for j in range(k_order + 1):
        hk += np.array([nodal_energy(y, spec) if j == 0 else gradient_energy(y, spec, j) for y in traj.data])
    hk = np.sqrt(hk)
    growth = None
    if hk[0] > 0:
        t = traj.times - traj.times[0]
        ratios = np.log(np.maximum(hk[1:], 1e-300) / hk[0]) / t[1:]
        growth = float(max(0.0, np.max(ratios)))
    return EnergyIdentityReport(traj.times, energy, rate, flux, residual, growth, hk, rate - flux)


# --------------------------------------------------------------------------
# initial data recipes
# --------------------------------------------------------------------------


def mode_profile_state(
    spec: GridSpec,
    k=(1, 0),
    amplitude: float = 1.0,
    decay: float = 1.0,
    component: str = "theta",
    phase: float = 0.0,
) -> BLState:
    """Single horizontal mode with profile ``amplitude * e^(-decay eta) cos(k.x + phase)``.

    ``component="v"`` puts the profile ``(1 - decay eta) e^(-decay eta)`` (zero
    layer integral) into the velocity along ``k``; ``"both"`` sets both.
    """
    x, y = physical_grid(spec)
    kx, ky = k
    kmag = np.hypot(kx, ky)
    horiz = forward_transform(np.cos(kx * x + ky * y + phase), spec).coeffs
    eta = spec.eta[:, None, None]
    state = BLState.zeros(spec)
    if component in ("theta", "both"):
        state.theta = amplitude * np.exp(-decay * eta) * horiz
    if component in ("v", "both"):
        if kmag == 0:
            raise ConfigError("velocity profile needs a nonzero wavevector")
        prof = amplitude * (1 - decay * eta) * np.exp(-decay * eta) * horiz
        state.v = np.stack([kx / kmag * prof, ky / kmag * prof])
    if component not in ("theta", "v", "both"):
        raise ConfigError(f"unknown component {component!r}")
    state.v = np.where(spec.mask, state.v, 0)
    state.theta = np.where(spec.mask, state.theta, 0)
    return project_compatible(state, np.exp(-decay * spec.eta))


def random_state(spec: GridSpec, rng: np.random.Generator, amplitude: float = 1.0, decay: float = 1.0, kmax: int | None = None) -> BLState:
    """Random real, retained-band, exponentially decaying, compatible layer state."""
    eta = spec.eta
    # smooth random profiles: a few random exponential-polynomial shapes per point
    basis = np.stack([np.exp(-decay * eta) * eta**p for p in range(3)])
    coef = rng.standard_normal((3, 3, spec.Nx, spec.Ny))
    phys = np.einsum("cpxy,pe->cexy", coef, basis)
    full = forward_transform(phys, spec).coeffs
    keep = spec.mask
    if kmax is not None:
        keep = keep & (spec.kmag <= kmax)
    full = amplitude * np.where(keep, full, 0)
    state = BLState(full[:2], full[2], spec)
    return project_compatible(state, np.exp(-decay * spec.eta))


@dataclass
class DepthSweep:
    depths: np.ndarray
    differences: np.ndarray  # ||u(L) - u(2L)|| for each L in depths
    ratios: np.ndarray  # successive shrink factors differences[i] / differences[i+1]
    t: float
    h: float
    dt: float

    def as_dict(self) -> dict:
        return {
            "depths": self.depths.tolist(),
            "differences": self.differences.tolist(),
            "ratios": self.ratios.tolist(),
            "t": self.t,
            "h_eta": self.h,
            "dt": self.dt,
        }


def layer_l2(y: np.ndarray, spec: GridSpec) -> float:
    """Discrete ``L2(T^2 x [0, L])`` norm of a compressed state (all components)."""
    ms = mode_set(spec)
    power = np.trapezoid(np.sum(np.abs(y) ** 2, axis=0), dx=spec.h_eta, axis=0)
    return float(np.sqrt(TORUS_AREA * power @ ms.weights))


def iota_depth_sweep(make_init, spec: GridSpec, depths, T: float = 1.0, dt: float | None = None, system: str = "iota") -> DepthSweep:
    """Sensitivity of the layer solution at time ``T`` to the lid depth.

    For each ``L`` in ``depths`` the problem is solved on ``[0, L]`` and on
    ``[0, 2L]`` with the same ``eta`` spacing as ``spec`` and a common time
    step; the shallower solution is extended by zero and the L2 difference
    recorded.  ``make_init(spec)`` builds the initial state on a given grid.
    """
    depths = np.asarray(sorted(float(L) for L in depths))
    if len(depths) < 2 or np.any(depths <= 0):
        raise ConfigError("need at least two positive depths")
    h = spec.h_eta
    grids = {}
    for L in sorted(set(depths) | set(2 * depths)):
        n = int(round(L / h)) + 1
        if not np.isclose((n - 1) * h, L, rtol=1e-12):
            raise ConfigError(f"depth {L:g} is not a multiple of the eta spacing {h:g}")
        grids[L] = spec.with_(L_eta=L, Neta=n)
    if dt is None:
        dt = T / np.ceil(T / auto_dt(grids[max(grids)]))
    finals = {L: run_linear_bl(make_init(g), dt, T, system=system, stride=n_steps_for(T, dt)).data[-1] for L, g in grids.items()}
    diffs = []
    for L in depths:
        shallow, deep = finals[L], finals[2 * L]
        ext = np.zeros_like(deep)
        ext[:, : shallow.shape[1]] = shallow
        diffs.append(layer_l2(ext - deep, grids[2 * L]))
    diffs = np.asarray(diffs)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = diffs[:-1] / diffs[1:]
    return DepthSweep(depths, diffs, ratios, T, h, dt)
