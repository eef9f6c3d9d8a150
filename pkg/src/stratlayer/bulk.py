"""Linear fast-wave Boussinesq system in the channel T^2 x (0, 1).

Per horizontal mode ``k`` (``kappa = |k|``) the system

    v_t + i k p / eps = 0,   w_t + (p_z - theta) / eps = 0,   theta_t + w / eps = 0,
    i k . v + w_z = 0,       w = 0 at z = 0, 1,

reduces to ``(kappa^2 - d_zz) w_t = kappa^2 theta / eps`` and
``theta_t = -w / eps``, with the velocity along ``k`` slaved to ``w``
(``k_hat . v = i w_z / kappa``) and the transverse velocity constant.

Vertical discretisation: polynomials of degree ``N = Nz - 1`` on the
Legendre-Gauss-Lobatto nodes of [0, 1] with a Galerkin (weak) form for the
``w`` equation.  With ``S = K + kappa^2 M`` the energy
``(1/kappa^2) w^T S w + theta^T M theta`` equals ``int |v|^2 + w^2 + theta^2``
exactly, and in Cholesky coordinates the mode system is a rotation, so each
mode is propagated exactly (by an SVD) for any step and any ``eps``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, solve_triangular, svd
from scipy.special import roots_jacobi

from .errors import ConfigError
from .grids import TORUS_AREA, GridSpec, SpectralField2D, forward_transform, inverse_transform, physical_grid


# --------------------------------------------------------------------------
# vertical polynomial space
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class VerticalBasis:
    z: np.ndarray  # nodes on [0, 1]
    D: np.ndarray  # nodal differentiation matrix
    D2: np.ndarray
    M: np.ndarray  # mass matrix  int phi_i phi_j
    K: np.ndarray  # stiffness    int phi_i' phi_j'
    G: np.ndarray  # int phi_i phi_j'
    mean_row: np.ndarray  # int phi_j


def _barycentric_weights(x: np.ndarray) -> np.ndarray:
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    logw = -np.sum(np.log(np.abs(diff)), axis=1)
    sign = np.prod(np.sign(diff), axis=1)
    return sign * np.exp(logw - np.max(logw))


def _interp_matrix(x: np.ndarray, wts: np.ndarray, xq: np.ndarray) -> np.ndarray:
    diff = xq[:, None] - x[None, :]
    exact = np.isclose(diff, 0.0, atol=1e-15)
    diff[exact] = 1.0
    terms = wts[None, :] / diff
    P = terms / terms.sum(axis=1, keepdims=True)
    rows = np.any(exact, axis=1)
    P[rows] = exact[rows].astype(float)
    return P


def _diff_matrix(x: np.ndarray, wts: np.ndarray) -> np.ndarray:
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    D = (wts[None, :] / wts[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


@lru_cache(maxsize=16)
def vertical_basis(Nz: int) -> VerticalBasis:
    """Lagrange basis on ``Nz`` Gauss-Lobatto nodes of [0, 1] and its Galerkin matrices."""
    N = Nz - 1
    interior = roots_jacobi(N - 1, 1.0, 1.0)[0]
    x = np.concatenate([[-1.0], np.sort(interior), [1.0]])
    z = 0.5 * (x + 1.0)
    wts = _barycentric_weights(z)
    D = _diff_matrix(z, wts)
    xq, wq = np.polynomial.legendre.leggauss(N + 2)
    zq, wq = 0.5 * (xq + 1.0), 0.5 * wq
    P = _interp_matrix(z, wts, zq)
    PD = P @ D
    M = P.T @ (wq[:, None] * P)
    K = PD.T @ (wq[:, None] * PD)
    G = P.T @ (wq[:, None] * PD)
    return VerticalBasis(z, D, D @ D, 0.5 * (M + M.T), 0.5 * (K + K.T), G, wq @ P)


# --------------------------------------------------------------------------
# per-|k| exact propagator
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModePropagator:
    """Rotation coordinates for one value of ``|k|``.

    ``a = U^T Ls^T w_int / kappa`` and ``b = V^T Lm^T theta`` evolve by
    ``a' = sigma b_r / eps``, ``b_r' = -sigma a / eps`` (remaining ``b`` fixed).
    """

    kappa: float
    sigma: np.ndarray
    to_a: np.ndarray  # (n_int, n_int) acting on w interior values
    to_b: np.ndarray  # (Nz, Nz) acting on theta
    from_a: np.ndarray
    from_b: np.ndarray


@lru_cache(maxsize=256)
def mode_propagator(Nz: int, kappa: float) -> ModePropagator:
    vb = vertical_basis(Nz)
    inner = slice(1, Nz - 1)
    S = vb.K[inner, inner] + kappa**2 * vb.M[inner, inner]
    Ls = cholesky(S, lower=True)
    Lm = cholesky(vb.M, lower=True)
    # C = kappa Ls^{-1} M[inner, :] Lm^{-T}
    tmp = solve_triangular(Ls, vb.M[inner, :], lower=True)
    C = kappa * solve_triangular(Lm, tmp.T, lower=True).T
    U, sigma, Vt = svd(C)
    to_a = U.T @ Ls.T / kappa
    to_b = Vt @ Lm.T
    from_a = kappa * solve_triangular(Ls.T, U, lower=False)
    from_b = solve_triangular(Lm.T, Vt.T, lower=False)
    return ModePropagator(kappa, sigma, to_a, to_b, from_a, from_b)


# --------------------------------------------------------------------------
# state
# --------------------------------------------------------------------------


@dataclass
class BulkState:
    """Per-mode vertical profiles on the Gauss-Lobatto nodes.

    ``v`` is ``(2, Nz, Nx, Nyh)``; ``w`` and ``theta`` are ``(Nz, Nx, Nyh)``.
    """

    v: np.ndarray
    w: np.ndarray
    theta: np.ndarray
    spec: GridSpec
    eps: float
    t: float = 0.0

    def __post_init__(self):
        shape = (self.spec.Nz,) + self.spec.shape_spectral
        self.v = np.asarray(self.v, dtype=complex)
        self.w = np.asarray(self.w, dtype=complex)
        self.theta = np.asarray(self.theta, dtype=complex)
        if self.v.shape != (2,) + shape or self.w.shape != shape or self.theta.shape != shape:
            raise ConfigError(f"BulkState arrays do not match grid {shape}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")

    @property
    def z(self) -> np.ndarray:
        return vertical_basis(self.spec.Nz).z

    @classmethod
    def zeros(cls, spec: GridSpec, eps: float, t: float = 0.0) -> "BulkState":
        shape = (spec.Nz,) + spec.shape_spectral
        return cls(np.zeros((2,) + shape), np.zeros(shape), np.zeros(shape), spec, eps, t)

    def copy(self) -> "BulkState":
        return BulkState(self.v.copy(), self.w.copy(), self.theta.copy(), self.spec, self.eps, self.t)


def _unit_k(spec: GridSpec):
    kmag = spec.kmag
    with np.errstate(invalid="ignore", divide="ignore"):
        ux = np.where(kmag > 0, spec.kx / kmag, 0.0)
        uy = np.where(kmag > 0, spec.ky / kmag, 0.0)
    return ux, uy, kmag


def slaved_velocity(w: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Velocity along ``k`` implied by ``i k . v + w_z = 0``: ``k_hat * i w_z / |k|``."""
    D = vertical_basis(spec.Nz).D
    ux, uy, kmag = _unit_k(spec)
    wz = np.tensordot(D, w, axes=(1, 0))
    with np.errstate(invalid="ignore", divide="ignore"):
        par = np.where(kmag > 0, 1j * wz / np.where(kmag > 0, kmag, 1.0), 0.0)
    return np.stack([ux * par, uy * par])


def make_bulk_state(spec: GridSpec, eps: float, theta, w=None, v_extra=None) -> BulkState:
    """Admissible state from ``theta`` and ``w`` (zero at the walls).

    The velocity along ``k`` is slaved to ``w``.  ``v_extra`` (shape
    ``(2, Nz, Nx, Nyh)``) contributes only its part transverse to ``k``; for
    the ``k = 0`` mode it is taken whole.
    """
    shape = (spec.Nz,) + spec.shape_spectral
    theta = np.broadcast_to(np.asarray(theta, dtype=complex), shape).copy()
    w = np.zeros(shape, complex) if w is None else np.broadcast_to(np.asarray(w, dtype=complex), shape).copy()
    if np.max(np.abs(w[[0, -1]]), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(w))):
        raise ConfigError("w must vanish at z = 0 and z = 1")
    w[[0, -1]] = 0.0
    zero_mode = spec.kmag == 0
    if np.max(np.abs(w[:, zero_mode]), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(w))):
        raise ConfigError("the k = 0 mode cannot carry vertical velocity")
    w[:, zero_mode] = 0.0
    v = slaved_velocity(w, spec)
    if v_extra is not None:
        ux, uy, _ = _unit_k(spec)
        extra = np.broadcast_to(np.asarray(v_extra, dtype=complex), (2,) + shape)
        along = ux * extra[0] + uy * extra[1]
        v = v + extra - np.stack([ux * along, uy * along])
    mask = spec.mask
    return BulkState(np.where(mask, v, 0), np.where(mask, w, 0), np.where(mask, theta, 0), spec, eps)


def divergence_residual(state: BulkState) -> float:
    """``max |i k . v + D w|`` relative to the size of the velocity."""
    D = vertical_basis(state.spec.Nz).D
    spec = state.spec
    div = 1j * (spec.kx * state.v[0] + spec.ky * state.v[1]) + np.tensordot(D, state.w, axes=(1, 0))
    scale = max(float(np.max(np.abs(state.w), initial=0.0)), float(np.max(spec.kmag * np.abs(state.v), initial=0.0)), 1e-300)
    return float(np.max(np.abs(div), initial=0.0)) / scale


def impermeability_residual(state: BulkState) -> float:
    return float(np.max(np.abs(state.w[[0, -1]]), initial=0.0))


def bulk_energy(state: BulkState) -> float:
    """``int_Omega |v|^2 + w^2 + theta^2`` (exact polynomial quadrature in z)."""
    M = vertical_basis(state.spec.Nz).M
    total = 0.0
    for f in (state.v[0], state.v[1], state.w, state.theta):
        quad = np.real(np.einsum("ixy,ij,jxy->xy", np.conj(f), M, f))
        total += np.sum(state.spec.weights * quad)
    return float(TORUS_AREA * total)


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------


def _kappa_groups(spec: GridSpec):
    """Retained nonzero modes grouped by ``|k|`` (rounded to avoid float splitting)."""
    mask = spec.mask & (spec.kmag > 0)
    k2 = np.rint(spec.k2).astype(int)
    groups = {}
    for ix, iy in zip(*np.nonzero(mask)):
        groups.setdefault(int(k2[ix, iy]), []).append((ix, iy))
    return {k: (np.array([p[0] for p in v]), np.array([p[1] for p in v])) for k, v in sorted(groups.items())}


def step_linear_bulk(state: BulkState, dt: float) -> BulkState:
    """Advance every mode by its exact discrete propagator over ``dt``."""
    if not dt > 0:
        raise ConfigError(f"time step must be positive, got {dt}")
    spec = state.spec
    Nz = spec.Nz
    s = dt / state.eps
    w = np.zeros_like(state.w)
    theta = state.theta.copy()
    for k2, (ix, iy) in _kappa_groups(spec).items():
        prop = mode_propagator(Nz, float(np.sqrt(k2)))
        wi = state.w[1:-1, ix, iy]
        th = state.theta[:, ix, iy]
        a = prop.to_a @ wi
        b = prop.to_b @ th
        r = len(prop.sigma)
        c = np.cos(prop.sigma * s)[:, None]
        sn = np.sin(prop.sigma * s)[:, None]
        a_new = c * a + sn * b[:r]
        b_new = b.copy()
        b_new[:r] = -sn * a + c * b[:r]
        w[1:-1, ix, iy] = prop.from_a @ a_new
        theta[:, ix, iy] = prop.from_b @ b_new
    # w vanishes at the walls, so wall temperatures are invariants of the discrete
    # dynamics; restoring them removes round-off that wall derivatives would amplify
    theta[[0, -1]] = state.theta[[0, -1]]
    # the k = 0 mode (and non-retained modes) are frozen: w stays 0, theta and v constant
    v_par_old = slaved_velocity(state.w, spec)
    v = state.v - v_par_old + slaved_velocity(w, spec)
    return BulkState(v, w, theta, spec, state.eps, state.t + dt)


def propagate(state: BulkState, t: float) -> BulkState:
    """State at absolute time ``t`` (single exact step)."""
    if t == state.t:
        return state.copy()
    return step_linear_bulk(state, t - state.t)


def solve_pressure(theta_profile, kmag: float, Nz: int | None = None) -> np.ndarray:
    """Pressure profile from ``p'' - |k|^2 p = theta'`` with ``p' = theta`` at both walls.

    Weak form ``(K + |k|^2 M) p = G^T theta``; for ``k = 0`` the mean-zero gauge
    is imposed with a Lagrange multiplier.  Accepts profiles with trailing
    mode axes.
    """
    theta = np.asarray(theta_profile)
    Nz = theta.shape[0] if Nz is None else Nz
    vb = vertical_basis(Nz)
    rhs = np.tensordot(vb.G.T, theta, axes=(1, 0))
    if kmag > 0:
        A = vb.K + kmag**2 * vb.M
        return cho_solve(cho_factor(A), rhs.reshape(Nz, -1)).reshape(theta.shape)
    A = np.zeros((Nz + 1, Nz + 1))
    A[:Nz, :Nz] = vb.K
    A[:Nz, Nz] = vb.mean_row
    A[Nz, :Nz] = vb.mean_row
    flat = rhs.reshape(Nz, -1)
    full = np.vstack([flat, np.zeros((1, flat.shape[1]))])
    sol = np.linalg.solve(A, full)
    return sol[:Nz].reshape(theta.shape)


def pressure_field(state: BulkState) -> np.ndarray:
    spec = state.spec
    p = np.zeros_like(state.theta)
    for k2, (ix, iy) in _kappa_groups(spec).items():
        p[:, ix, iy] = solve_pressure(state.theta[:, ix, iy], float(np.sqrt(k2)), spec.Nz)
    zero = (spec.kmag == 0)
    p[:, zero] = solve_pressure(state.theta[:, zero], 0.0, spec.Nz)
    return p


# --------------------------------------------------------------------------
# wall traces
# --------------------------------------------------------------------------

TRACE_NAMES = ("dz_v", "dzz_w", "dzz_theta")


@dataclass
class TraceReport:
    dz_v_bottom: SpectralField2D
    dz_v_top: SpectralField2D
    dzz_w_bottom: SpectralField2D
    dzz_w_top: SpectralField2D
    dzz_theta_bottom: SpectralField2D
    dzz_theta_top: SpectralField2D
    t: float

    def field(self, name: str, wall: str = "bottom") -> SpectralField2D:
        return getattr(self, f"{name}_{wall}")

    def sup(self, name: str, wall: str = "bottom") -> float:
        """Grid maximum of the trace's magnitude over the torus (Euclidean over components)."""
        f = self.field(name, wall)
        phys = inverse_transform(f.coeffs, f.spec)
        if phys.ndim == 3:
            return float(np.max(np.sqrt(np.sum(phys**2, axis=0))))
        return float(np.max(np.abs(phys)))


def boundary_trace_diagnostics(state: BulkState) -> TraceReport:
    """Wall values of ``d_z v``, ``d_zz w`` and ``d_zz theta``.

    Profiles are degree-``Nz-1`` polynomials, so the traces are exact
    derivatives of the discrete solution (no one-sided stencil error).
    """
    vb = vertical_basis(state.spec.Nz)
    spec = state.spec

    def row(mat, f, i):
        return SpectralField2D(np.tensordot(mat[i], f, axes=(0, -3)), spec)

    return TraceReport(
        row(vb.D, state.v, 0),
        row(vb.D, state.v, -1),
        row(vb.D2, state.w, 0),
        row(vb.D2, state.w, -1),
        row(vb.D2, state.theta, 0),
        row(vb.D2, state.theta, -1),
        state.t,
    )


def predicted_traces(init: BulkState, t: float) -> TraceReport:
    """Closed-form wall traces at time ``t`` from the initial traces alone.

    ``w_zz(t) = w_zz(0) + (t/eps) Lap_h theta(0)``,
    ``theta_zz(t) = theta_zz(0) - (t/eps) w_zz(0) - (t^2 / 2 eps^2) Lap_h theta(0)``,
    ``v_z(t) = v_z(0) - (t/eps) grad_h theta(0)``, all evaluated at the wall,
    where ``theta`` is constant in time because ``w`` vanishes there.
    """
    spec = init.spec
    rep = boundary_trace_diagnostics(init)
    eps = init.eps
    s = (t - init.t) / eps
    out = {}
    for wall, idx in (("bottom", 0), ("top", -1)):
        th = init.theta[idx]
        lap = -spec.k2 * th
        grad = np.stack([1j * spec.kx * th, 1j * spec.ky * th])
        wzz = rep.field("dzz_w", wall).coeffs
        tzz = rep.field("dzz_theta", wall).coeffs
        vz = rep.field("dz_v", wall).coeffs
        out[f"dzz_w_{wall}"] = SpectralField2D(wzz + s * lap, spec)
        out[f"dzz_theta_{wall}"] = SpectralField2D(tzz - s * wzz - 0.5 * s**2 * lap, spec)
        out[f"dz_v_{wall}"] = SpectralField2D(vz - s * grad, spec)
    return TraceReport(t=t, **out)


@dataclass
class ScalingResult:
    eps: np.ndarray
    magnitudes: dict
    slopes: dict
    residuals: dict
    floor: float

    def as_dict(self) -> dict:
        return {
            "eps": self.eps.tolist(),
            "noise_floor": self.floor,
            "slopes": {k: float(v) for k, v in self.slopes.items()},
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "magnitudes": {k: [float(x) for x in v] for k, v in self.magnitudes.items()},
        }


def scaling_study(init: BulkState, eps_list, t_probe: float, wall: str = "bottom", floor_rel: float = 1e-6) -> ScalingResult:
    """Least-squares slopes of ``log(sup|trace| + floor)`` against ``log eps``.

    ``init`` fixes the initial profiles; its own ``eps`` is replaced by each
    entry of ``eps_list``.  The additive floor (``floor_rel`` times the size of
    the initial data) keeps traces that vanish up to round-off from producing
    meaningless slopes.
    """
    eps = np.asarray(list(eps_list), dtype=float)
    if len(eps) < 3:
        raise ConfigError(f"scaling study needs at least 3 eps values, got {len(eps)}")
    if np.any(eps <= 0):
        raise ConfigError("eps values must be positive")
    if not t_probe > 0:
        raise ConfigError("t_probe must be positive")
    scale = max(float(np.max(np.abs(f), initial=0.0)) for f in (init.v, init.w, init.theta))
    floor = floor_rel * max(scale, 1e-300)
    mags = {name: [] for name in TRACE_NAMES}
    for e in eps:
        start = replace(init.copy(), eps=float(e), t=0.0)
        rep = boundary_trace_diagnostics(propagate(start, t_probe))
        for name in TRACE_NAMES:
            mags[name].append(rep.sup(name, wall))
    slopes, residuals = {}, {}
    x = np.log(eps)
    for name in TRACE_NAMES:
        y = np.log(np.asarray(mags[name]) + floor)
        coef, res, *_ = np.polyfit(x, y, 1, full=True)
        slopes[name] = float(coef[0])
        residuals[name] = float(np.sqrt(res[0] / len(x))) if len(res) else 0.0
    return ScalingResult(eps, {k: np.asarray(v) for k, v in mags.items()}, slopes, residuals, floor)


def wall_forced_state(spec: GridSpec, eps: float, amplitude: float = 1.0) -> BulkState:
    """``theta`` with a nonzero wall Laplacian and ``w = v = 0``.

    ``theta = cos x (1 + 0.1 z) + 0.5 sin(x + 2y) e^(-z)``; the wall traces grow
    like ``t/eps`` (``w_zz``, ``v_z``) and ``(t/eps)^2`` (``theta_zz``).
    """
    x, y = physical_grid(spec)
    z = vertical_basis(spec.Nz).z[:, None, None]
    theta = np.cos(x) * (1 + 0.1 * z) + 0.5 * np.sin(x + 2 * y) * np.exp(-z)
    return make_bulk_state(spec, eps, amplitude * forward_transform(theta, spec).coeffs)


def invariant_state(spec: GridSpec, eps: float, amplitude: float = 1.0) -> BulkState:
    """Data whose wall traces stay zero: ``theta = sin(pi z) cos x``, ``w = sin(2 pi z) cos(x + y)``."""
    x, y = physical_grid(spec)
    z = vertical_basis(spec.Nz).z[:, None, None]
    theta = forward_transform(np.sin(np.pi * z) * np.cos(x), spec).coeffs
    w = forward_transform(np.sin(2 * np.pi * z) * np.cos(x + y), spec).coeffs
    return make_bulk_state(spec, eps, amplitude * theta, amplitude * w)


def mode_state(spec: GridSpec, eps: float, k=(1, 0), amplitude: float = 1.0, decay: float = 1.0) -> BulkState:
    """Single horizontal mode ``theta = amplitude e^(-decay z) cos(k.x)``, ``w = v = 0``."""
    x, y = physical_grid(spec)
    z = vertical_basis(spec.Nz).z[:, None, None]
    theta = amplitude * np.exp(-decay * z) * np.cos(k[0] * x + k[1] * y)
    return make_bulk_state(spec, eps, forward_transform(theta, spec).coeffs)
