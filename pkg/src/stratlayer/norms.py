"""Analytic (Gevrey-type) norms, the radius schedule and the contraction metric.

Fields are layer profiles in the rfft2 layout with the layer coordinate on
axis ``-3``: arrays shaped ``(..., Neta, Nx, Ny//2 + 1)``.  Leading axes are
components (for instance ``(v_x, v_y, theta)``) and are combined in the
Euclidean sense inside the horizontal L2 norm.

For a multi-index ``alpha = (a_x, a_y, a_eta)`` the horizontal part of the
derivative is a multiplication by ``(i kx)^a_x (i ky)^a_y`` and the layer part
is a finite-difference derivative.  The weighted semi-norm of order ``m`` is

    |g|_{d,m} = sum_{|alpha| = m} max_eta exp(d eta) || d^alpha g(eta) ||_{L2(T^2)}.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import quad

from .errors import ConfigError
from .grids import TORUS_AREA, GridSpec, eta_derivative


@dataclass(frozen=True)
class NormParams:
    """Layer weight ``d``, polynomial exponent ``r``, radius ``tau``, truncation order ``M``."""

    d: float = 1.0
    r: float = 2.0
    tau: float = 0.5
    M: int = 8

    def __post_init__(self):
        if not self.d > 0:
            raise ConfigError(f"weight rate d must be positive, got {self.d}")
        if not self.tau > 0:
            raise ConfigError(f"radius tau must be positive, got {self.tau}")
        if not self.r >= 2:
            raise ConfigError(f"exponent r must be >= 2, got {self.r}")
        if int(self.M) != self.M or self.M < 2:
            raise ConfigError(f"truncation order M must be an integer >= 2, got {self.M}")


class NormValue(NamedTuple):
    value: float
    last_term: float
    truncation_warning: bool


def _components(f) -> np.ndarray:
    if hasattr(f, "stacked"):
        f = f.stacked()
    f = np.asarray(f)
    if f.ndim < 3:
        raise ConfigError("layer field needs axes (..., Neta, Nx, Nyh)")
    return f.reshape((-1,) + f.shape[-3:])


def _check(f: np.ndarray, spec: GridSpec):
    if f.shape[-3:] != (spec.Neta, spec.Nx, spec.Nyh):
        raise ConfigError(f"field trailing shape {f.shape[-3:]} does not match grid {(spec.Neta, spec.Nx, spec.Nyh)}")


def semi_norm_table(f, spec: GridSpec, d: float, M: int) -> np.ndarray:
    """All semi-norms ``|f|_{d,m}`` for ``m = 0..M``."""
    f = _components(f)
    _check(f, spec)
    kx = (spec.kx * np.ones_like(spec.ky)).ravel()
    ky = (spec.ky * np.ones_like(spec.kx)).ravel()
    flat = f.reshape(f.shape[0], spec.Neta, -1)
    return semi_norm_table_modes(flat, kx, ky, spec.weights.ravel(), spec.h_eta, d, M)


def semi_norm_table_modes(f: np.ndarray, kx, ky, weights, h: float, d: float, M: int) -> np.ndarray:
    """Semi-norm table for profiles stored as ``(components, Neta, n_modes)``.

    ``kx``, ``ky`` and ``weights`` describe each stored mode (weights are the
    Parseval multiplicities 1 or 2).
    """
    f = np.asarray(f)
    n_eta = f.shape[1]
    eta = h * np.arange(n_eta)
    weight_eta = np.exp(d * eta)
    ax, ay = np.abs(np.asarray(kx, float)), np.abs(np.asarray(ky, float))
    px = np.stack([ax ** (2 * p) for p in range(M + 1)])
    py = np.stack([ay ** (2 * p) for p in range(M + 1)])
    table = np.zeros(M + 1)
    for a_eta in range(M + 1):
        g = f if a_eta == 0 else eta_derivative(f, h, deriv=a_eta, axis=1)
        power = np.sum(np.abs(g) ** 2, axis=0) * weights
        for m in range(a_eta, M + 1):
            h_order = m - a_eta
            for a_x in range(h_order + 1):
                norm_eta = np.sqrt(TORUS_AREA * (power @ (px[a_x] * py[h_order - a_x])))
                table[m] += float(np.max(weight_eta * norm_eta))
    return table


def semi_norm(f, spec: GridSpec, params: NormParams, m: int) -> float:
    """Weighted semi-norm of order ``m`` (grid maximum in eta)."""
    if m < 0 or m > params.M:
        raise ConfigError(f"order m={m} outside 0..M={params.M}")
    return float(semi_norm_table(f, spec, params.d, m)[m])


def x_weights(tau: float, r: float, order: int) -> np.ndarray:
    m = np.arange(order + 1)
    return np.array([(k + 1) ** r * tau**k / math.factorial(k) for k in m])


def y_weights(tau: float, r: float, order: int) -> np.ndarray:
    w = np.zeros(order + 1)
    for k in range(1, order + 1):
        w[k] = (k + 1) ** r * tau ** (k - 1) / math.factorial(k - 1)
    return w


def _summed(terms: np.ndarray, first: int) -> NormValue:
    value = float(np.sum(terms[first:]))
    last = float(terms[-1]) if len(terms) > first else 0.0
    flag = value > 0 and last > 0.01 * value
    return NormValue(value, last, bool(flag))


def x_from_table(table, tau: float, r: float) -> NormValue:
    table = np.asarray(table)
    return _summed(table * x_weights(tau, r, len(table) - 1), 0)


def y_from_table(table, tau: float, r: float) -> NormValue:
    table = np.asarray(table)
    return _summed(table * y_weights(tau, r, len(table) - 1), 1)


def _order(params: NormParams, order):
    if order is None:
        return params.M
    if order < 0 or order > params.M:
        raise ConfigError(f"order {order} outside 0..M={params.M}")
    return int(order)


def x_norm(f, spec: GridSpec, params: NormParams, order: int | None = None) -> NormValue:
    """Truncated ``X_tau`` norm; ``order`` (default ``params.M``) caps the sum."""
    n = _order(params, order)
    out = x_from_table(semi_norm_table(f, spec, params.d, n), params.tau, params.r)
    if out.truncation_warning:
        warnings.warn(f"X norm truncation term {out.last_term:.3g} exceeds 1% of {out.value:.3g}", RuntimeWarning, stacklevel=2)
    return out


def y_norm(f, spec: GridSpec, params: NormParams, order: int | None = None) -> NormValue:
    """Truncated ``Y_tau`` norm (sum starts at order 1)."""
    n = _order(params, order)
    out = y_from_table(semi_norm_table(f, spec, params.d, n), params.tau, params.r)
    if out.truncation_warning:
        warnings.warn(f"Y norm truncation term {out.last_term:.3g} exceeds 1% of {out.value:.3g}", RuntimeWarning, stacklevel=2)
    return out


# --------------------------------------------------------------------------
# radius schedule
# --------------------------------------------------------------------------


def _tau_rate_coefficients(tau0: float, C_d: float, M_data: float, d: float) -> tuple[float, float]:
    """``tau' = -(a + b / tau)``."""
    b = 2.0 * C_d * M_data
    a = (
        2.0 * C_d * M_data
        + 1.0 / d
        + 4.0 * C_d * (2.0 / tau0 + 4.0 / tau0**2) * M_data
        + 4.0 * C_d * (1.0 + 2.0 / tau0) * M_data
    )
    return a, b


@dataclass
class TauSchedule:
    tau0: float
    C_d: float
    M_data: float
    d: float
    times: np.ndarray
    samples: np.ndarray
    T_max: float
    truncated: bool = False
    substeps: int = field(default=8, repr=False)

    @property
    def rate_coefficients(self) -> tuple[float, float]:
        return _tau_rate_coefficients(self.tau0, self.C_d, self.M_data, self.d)

    @property
    def contraction_weight(self) -> float:
        """Coefficient of the time-integrated ``Y`` term in the contraction metric."""
        return 4.0 * self.C_d * (2.0 / self.tau0 + 4.0 / self.tau0**2) * self.M_data

    def rate(self, tau):
        a, b = self.rate_coefficients
        return -(a + b / tau)

    def tau_at(self, t: float, steps: int = 2048) -> float:
        """RK4 value of tau at an arbitrary time (independent of the stored grid)."""
        return float(_rk4_tau(self.rate, self.tau0, np.array([0.0, t]), steps)[-1])

    def time_of(self, tau: float) -> float:
        """Closed-form inverse ``t(tau)``."""
        a, b = self.rate_coefficients
        return (self.tau0 - tau) / a - (b / a**2) * math.log((a * self.tau0 + b) / (a * tau + b))


def _rk4_tau(rate, tau0: float, times: np.ndarray, substeps: int) -> np.ndarray:
    out = np.empty(len(times))
    out[0] = tau = tau0
    for n in range(1, len(times)):
        h = (times[n] - times[n - 1]) / substeps
        for _ in range(substeps):
            k1 = rate(tau)
            k2 = rate(tau + 0.5 * h * k1)
            k3 = rate(tau + 0.5 * h * k2)
            k4 = rate(tau + h * k3)
            tau = tau + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        out[n] = tau
    return out


def tau_schedule(
    tau0: float,
    C_d: float,
    M_data: float,
    d: float,
    T: float,
    times=None,
    n_steps: int = 100,
    substeps: int = 8,
) -> TauSchedule:
    """Integrate the radius ODE by RK4 on ``times`` (default: uniform grid on [0, T]).

    ``T_max`` is the time at which ``tau`` reaches ``tau0/2``.  When the requested
    horizon exceeds it, the grid is cut at ``T_max`` and ``truncated`` is set.
    """
    if not tau0 > 0:
        raise ConfigError(f"tau0 must be positive, got {tau0}")
    if not d > 0:
        raise ConfigError(f"d must be positive, got {d}")
    if not C_d > 0:
        raise ConfigError(f"C_d must be positive, got {C_d}")
    if not M_data >= 0:
        raise ConfigError(f"M_data must be nonnegative, got {M_data}")
    if not T > 0:
        raise ConfigError(f"horizon T must be positive, got {T}")
    a, b = _tau_rate_coefficients(tau0, C_d, M_data, d)
    half = 0.5 * tau0
    # integrate dt/dtau = -tau / (a tau + b) from tau0 down to tau0/2
    T_max = quad(lambda s: s / (a * s + b), half, tau0, epsabs=1e-15, epsrel=1e-13)[0]
    times = np.linspace(0.0, T, n_steps + 1) if times is None else np.asarray(times, dtype=float)
    if times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ConfigError("schedule times must start at 0 and increase strictly")
    truncated = bool(times[-1] > T_max)
    if truncated:
        times = times[times <= T_max]
    sched = TauSchedule(tau0, C_d, M_data, d, times, np.empty(0), T_max, truncated, substeps)
    sched.samples = _rk4_tau(sched.rate, tau0, times, substeps)
    return sched


def contraction_metric(diff_tables, schedule: TauSchedule, r: float) -> float:
    """``(1/2) max_t X_tau(t) + w * int_0^T Y_tau(t) dt`` from per-sample semi-norm tables.

    ``diff_tables`` has shape ``(n_samples, M+1)``: the semi-norms of the
    trajectory difference at each schedule time.
    """
    tables = np.asarray(diff_tables, dtype=float)
    if tables.ndim != 2 or tables.shape[0] != len(schedule.samples):
        raise ConfigError(
            f"trajectory has {tables.shape[0] if tables.ndim else 0} samples, schedule has {len(schedule.samples)}"
        )
    xs = np.array([x_from_table(t, tau, r).value for t, tau in zip(tables, schedule.samples)])
    ys = np.array([y_from_table(t, tau, r).value for t, tau in zip(tables, schedule.samples)])
    integral = np.trapezoid(ys, schedule.times) if len(ys) > 1 else 0.0
    return float(0.5 * np.max(xs) + schedule.contraction_weight * integral)


def trajectory_tables(trajectory, spec: GridSpec, d: float, M: int) -> np.ndarray:
    """Semi-norm tables of every sample of a trajectory (iterable of fields)."""
    return np.array([semi_norm_table(f, spec, d, M) for f in trajectory])


# --------------------------------------------------------------------------
# combinatorial bounds used in the product estimates
# --------------------------------------------------------------------------

INEQUALITY_THRESHOLDS = {1: 1.0, 2: 1.0, 3: 2.0, 4: 2.0}


def inequality_term(which: int, m: int, j: int, r: float) -> float:
    """Value of one of the four weight-ratio expressions at ``(m, j)``.

    Forms 1 and 3 are used for ``0 <= j <= m//2``; forms 2 and 4 for
    ``m//2 < j <= m``.
    """
    if which == 1:
        return ((m + 1) / (m - j + 2)) ** r * math.sqrt((j + 1) * (j + 2)) / ((j + 1) * (j + 3)) ** (r / 2)
    if which == 2:
        return ((m + 1) / (j + 1)) ** r * math.sqrt((m - j + 1) * (m - j + 2)) / ((m - j + 2) * (m - j + 4)) ** (r / 2)
    if which == 3:
        return ((m + 1) / (m - j + 2)) ** r * (j + 1) * math.sqrt((j + 2) * (j + 3)) / ((j + 2) * (j + 4)) ** (r / 2)
    if which == 4:
        return ((m + 1) / (j + 2)) ** r * (m - j + 1) * math.sqrt((m - j + 2) * (m - j + 3)) / ((m - j + 2) * (m - j + 4)) ** (r / 2)
    raise ConfigError(f"inequality index must be 1..4, got {which}")


def _j_range(which: int, m: int) -> range:
    return range(0, m // 2 + 1) if which in (1, 3) else range(m // 2 + 1, m + 1)


@dataclass
class InequalityScan:
    which: int
    r: float
    m_max: int
    sup: float
    argmax: tuple[int, int]
    sup_half: float
    sup_quarter: float
    plateau: bool
    plateau_gap: float

    def as_dict(self) -> dict:
        return {
            "inequality": self.which,
            "r": self.r,
            "m_max": self.m_max,
            "sup": self.sup,
            "argmax": list(self.argmax),
            "sup_half_range": self.sup_half,
            "sup_quarter_range": self.sup_quarter,
            "plateau_gap": self.plateau_gap,
            "plateau": self.plateau,
            "finite": bool(np.isfinite(self.sup)),
        }


def scan_inequality(which: int, m_max: int, r: float, plateau_rtol: float = 0.1) -> InequalityScan:
    """Exhaustive scan of one expression over ``0 <= m <= m_max``.

    Several of the expressions increase monotonically towards their supremum
    (at rate ``1/m``), so the running max never stops growing exactly.  The
    plateau check therefore asks for two things: the sup over ``m <= m_max``
    exceeds the sup over ``m <= m_max // 2`` by at most ``plateau_rtol``
    (relative), and that gap is smaller than the gap between the half and
    quarter ranges, i.e. the increments are contracting.
    """
    if which not in INEQUALITY_THRESHOLDS:
        raise ConfigError(f"inequality index must be 1..4, got {which}")
    threshold = INEQUALITY_THRESHOLDS[which]
    if r < threshold:
        raise ConfigError(f"inequality {which} requires r >= {threshold:g}, got r={r:g}")
    if m_max < 1:
        raise ConfigError("m_max must be >= 1")
    best, arg = -np.inf, (0, 0)
    best_half = best_quarter = -np.inf
    for m in range(m_max + 1):
        for j in _j_range(which, m):
            val = inequality_term(which, m, j, r)
            if val > best:
                best, arg = val, (m, j)
            if m <= m_max // 2:
                best_half = max(best_half, val)
            if m <= m_max // 4:
                best_quarter = max(best_quarter, val)
    gap = (best - best_half) / best if best > 0 else 0.0
    previous = (best_half - best_quarter) / best if best > 0 else 0.0
    contracting = gap == 0.0 or gap < previous
    plateau = bool(np.isfinite(best) and gap <= plateau_rtol and contracting)
    return InequalityScan(which, r, m_max, float(best), arg, float(best_half), float(best_quarter), plateau, float(gap))


def verify_inequalities(m_max: int, r: float, which=(1, 2, 3, 4), plateau_rtol: float = 0.1) -> list[InequalityScan]:
    return [scan_inequality(w, m_max, r, plateau_rtol) for w in which]
