"""Discrete grids and calculus kernels shared by every solver.

Horizontal fields live on the 2-torus ``[0, 2*pi)^2`` and are stored in the
``numpy.fft.rfft2`` layout ``(..., Nx, Ny//2 + 1)`` with the normalisation

    f(x, y) = sum_k c_k exp(i k . x),

so that a constant field 1 has ``c_(0,0) = 1`` and ``cos(x)`` has
``c_(+-1,0) = 1/2``.  Only the half plane ``ky >= 0`` is stored; Hermitian
symmetry of real fields is implied by the layout.

Profiles in the layer coordinate ``eta`` live on a uniform node grid on
``[0, L_eta]`` (node 0 at the wall).  Integrals in ``eta`` are composite
trapezoid sums.  Two auxiliary operators map nodes to the half nodes
``eta_(j+1/2)``: the two-point average and the two-point difference.  They
satisfy ``D (up-integral) = A`` exactly, which is what makes the discrete
energy identities of the layer equations hold to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.integrate import cumulative_trapezoid

from .errors import ConfigError

TWO_PI = 2.0 * np.pi
TORUS_AREA = TWO_PI**2


@dataclass(frozen=True)
class GridSpec:
    """Resolution of the horizontal torus, the channel and the layer.

    ``L_eta`` is the truncation of the half line in the layer variable; it plays
    the role of the lid height of the finite-depth approximation.
    """

    Nx: int = 16
    Ny: int = 16
    Nz: int = 65
    Neta: int = 257
    L_eta: float = 20.0
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        for name in ("Nx", "Ny"):
            n = getattr(self, name)
            if int(n) != n or n < 4 or n % 2:
                raise ConfigError(f"{name} must be an even integer >= 4, got {n}")
        for name in ("Nz", "Neta"):
            n = getattr(self, name)
            if int(n) != n or n < 8:
                raise ConfigError(f"{name} must be an integer >= 8, got {n}")
        if not self.L_eta > 0:
            raise ConfigError(f"L_eta must be positive, got {self.L_eta}")
        if not 0 < self.dealias_fraction <= 1:
            raise ConfigError(f"dealias_fraction must lie in (0, 1], got {self.dealias_fraction}")

    # horizontal wavenumbers -------------------------------------------------
    @property
    def Nyh(self) -> int:
        return self.Ny // 2 + 1

    @property
    def shape_physical(self) -> tuple[int, int]:
        return (self.Nx, self.Ny)

    @property
    def shape_spectral(self) -> tuple[int, int]:
        return (self.Nx, self.Nyh)

    @cached_property
    def kx(self) -> np.ndarray:
        return np.fft.fftfreq(self.Nx, d=1.0 / self.Nx)[:, None]

    @cached_property
    def ky(self) -> np.ndarray:
        return np.fft.rfftfreq(self.Ny, d=1.0 / self.Ny)[None, :]

    @cached_property
    def k2(self) -> np.ndarray:
        return self.kx**2 + self.ky**2

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @property
    def kmax_x(self) -> int:
        return int(np.floor(self.dealias_fraction * self.Nx / 2 + 1e-12))

    @property
    def kmax_y(self) -> int:
        return int(np.floor(self.dealias_fraction * self.Ny / 2 + 1e-12))

    @cached_property
    def mask(self) -> np.ndarray:
        """Retained (dealiased) mode set; Nyquist modes are never retained."""
        keep = (np.abs(self.kx) <= self.kmax_x) & (np.abs(self.ky) <= self.kmax_y)
        keep &= np.abs(self.kx) < self.Nx // 2
        keep &= self.ky < self.Ny // 2
        return keep

    @cached_property
    def weights(self) -> np.ndarray:
        """Multiplicity of each stored mode in the full spectrum (1 or 2)."""
        w = np.full(self.shape_spectral, 2.0)
        w[:, 0] = 1.0
        if self.Ny % 2 == 0:
            w[:, -1] = 1.0
        return w

    @property
    def kmag_max(self) -> float:
        return float(np.max(self.kmag[self.mask]))

    # layer coordinate -------------------------------------------------------
    @cached_property
    def eta(self) -> np.ndarray:
        return np.linspace(0.0, self.L_eta, self.Neta)

    @property
    def h_eta(self) -> float:
        return self.L_eta / (self.Neta - 1)

    def with_(self, **changes) -> "GridSpec":
        params = {f: getattr(self, f) for f in self.__dataclass_fields__}
        params.update(changes)
        return GridSpec(**params)


# --------------------------------------------------------------------------
# horizontal Fourier transforms
# --------------------------------------------------------------------------


@dataclass
class SpectralField2D:
    """Fourier coefficients of a real field on the torus (rfft2 layout).

    ``coeffs`` may carry leading axes (vector components, profiles); the last
    two axes are ``(Nx, Ny//2 + 1)``.
    """

    coeffs: np.ndarray
    spec: GridSpec

    def coeff(self, kx: int, ky: int):
        """Coefficient of wavevector ``(kx, ky)``, negative ``ky`` by conjugation."""
        if ky < 0:
            return np.conj(self.coeffs[..., (-kx) % self.spec.Nx, -ky])
        return self.coeffs[..., kx % self.spec.Nx, ky]

    def to_physical(self) -> np.ndarray:
        return inverse_transform(self.coeffs, self.spec)

    def hermitian_defect(self) -> float:
        """Largest violation of c(-k) = conj(c(k)) among the self-paired columns."""
        defect = 0.0
        cols = [0] + ([self.spec.Nyh - 1] if self.spec.Ny % 2 == 0 else [])
        for col in cols:
            c = self.coeffs[..., :, col]
            mirrored = np.conj(np.roll(c[..., ::-1], 1, axis=-1))
            defect = max(defect, float(np.max(np.abs(c - mirrored), initial=0.0)))
        return defect

    def l2_norm(self) -> np.ndarray:
        return torus_l2(self.coeffs, self.spec)

    def __add__(self, other):
        return SpectralField2D(self.coeffs + other.coeffs, self.spec)

    def __sub__(self, other):
        return SpectralField2D(self.coeffs - other.coeffs, self.spec)

    def __mul__(self, scalar):
        return SpectralField2D(self.coeffs * scalar, self.spec)

    __rmul__ = __mul__


def forward_transform(samples, spec: GridSpec) -> SpectralField2D:
    """Grid values on the torus -> Fourier coefficients (no truncation)."""
    return SpectralField2D(fft_forward(samples, spec), spec)


def inverse_transform(coeffs, spec: GridSpec) -> np.ndarray:
    if isinstance(coeffs, SpectralField2D):
        coeffs = coeffs.coeffs
    coeffs = np.asarray(coeffs)
    if coeffs.shape[-2:] != spec.shape_spectral:
        raise ConfigError(f"coefficient array has trailing shape {coeffs.shape[-2:]}, expected {spec.shape_spectral}")
    return np.fft.irfft2(coeffs, s=spec.shape_physical, norm="forward")


def fft_forward(samples, spec: GridSpec) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    if samples.shape[-2:] != spec.shape_physical:
        raise ConfigError(f"sample array has trailing shape {samples.shape[-2:]}, expected {spec.shape_physical}")
    return np.fft.rfft2(samples, norm="forward")


def physical_grid(spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    x = TWO_PI * np.arange(spec.Nx) / spec.Nx
    y = TWO_PI * np.arange(spec.Ny) / spec.Ny
    return np.meshgrid(x, y, indexing="ij")


def dealias(coeffs, spec: GridSpec) -> np.ndarray:
    return np.where(spec.mask, coeffs, 0.0)


def dealiased_product(a, b, spec: GridSpec) -> SpectralField2D:
    """Pointwise product of two physical fields, truncated to the retained set."""
    return SpectralField2D(product_coeffs(a, b, spec), spec)


def product_coeffs(a, b, spec: GridSpec) -> np.ndarray:
    return dealias(fft_forward(np.asarray(a) * np.asarray(b), spec), spec)


def torus_power(coeffs, spec: GridSpec) -> np.ndarray:
    """Squared L2(T^2) norm over the last two axes (Parseval)."""
    return TORUS_AREA * np.sum(spec.weights * np.abs(coeffs) ** 2, axis=(-2, -1))


def torus_l2(coeffs, spec: GridSpec) -> np.ndarray:
    return np.sqrt(torus_power(coeffs, spec))


def grid_l2(samples) -> np.ndarray:
    """L2(T^2) norm of grid samples by the (spectrally exact) periodic rectangle rule."""
    samples = np.asarray(samples)
    return np.sqrt(TORUS_AREA * np.mean(np.abs(samples) ** 2, axis=(-2, -1)))


# --------------------------------------------------------------------------
# eta calculus
# --------------------------------------------------------------------------


class TailIntegral(NamedTuple):
    values: np.ndarray
    truncated: bool
    edge_ratio: float


def eta_integral_up(f, h: float, axis: int = 0) -> np.ndarray:
    """``int_0^eta f(s) ds`` at every node (composite trapezoid)."""
    return cumulative_trapezoid(f, dx=h, axis=axis, initial=0)


def eta_total(f, h: float, axis: int = 0) -> np.ndarray:
    """``int_0^L f`` by the trapezoid rule; consistent with the last entry of the up-integral."""
    return np.take(eta_integral_up(f, h, axis=axis), -1, axis=axis)


def tail_integral(f, h: float, axis: int = 0) -> np.ndarray:
    up = eta_integral_up(f, h, axis=axis)
    total = np.take(up, [-1], axis=axis)
    return total - up


def eta_integral_tail(f, h: float, axis: int = 0, decay_threshold: float = 1e-10) -> TailIntegral:
    """``int_eta^L f(s) ds``; flags profiles that have not decayed at ``L``."""
    f = np.asarray(f)
    values = tail_integral(f, h, axis=axis)
    scale = float(np.max(np.abs(f), initial=0.0))
    edge = float(np.max(np.abs(np.take(f, -1, axis=axis)), initial=0.0))
    ratio = edge / scale if scale > 0 else 0.0
    return TailIntegral(values, ratio > decay_threshold, ratio)


def eta_average(f, axis: int = 0) -> np.ndarray:
    """Node values -> half-node averages."""
    f = np.moveaxis(np.asarray(f), axis, 0)
    return np.moveaxis(0.5 * (f[1:] + f[:-1]), 0, axis)


def eta_difference(f, h: float, axis: int = 0) -> np.ndarray:
    """Node values -> half-node derivative ``(f_(j+1) - f_j) / h``."""
    f = np.moveaxis(np.asarray(f), axis, 0)
    return np.moveaxis((f[1:] - f[:-1]) / h, 0, axis)


def fornberg_weights(z: float, x, m: int) -> np.ndarray:
    """Finite-difference weights for the m-th derivative at z from nodes x."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    c = np.zeros((n, m + 1))
    c1 = 1.0
    c4 = x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


_FD_CACHE: dict = {}


def fd_matrix(n: int, h: float, deriv: int = 1, order: int = 4) -> sp.csr_matrix:
    """Uniform-grid derivative matrix, centred in the interior, one-sided near the ends.

    Each row uses ``deriv + order`` (rounded up to odd for centred rows) nodes so
    the truncation error is ``O(h**order)`` everywhere.
    """
    key = (n, float(h), deriv, order)
    if key in _FD_CACHE:
        return _FD_CACHE[key]
    if deriv == 0:
        mat = sp.identity(n, format="csr")
        _FD_CACHE[key] = mat
        return mat
    width = deriv + order
    if width % 2 == 0 and deriv % 2 == 1:
        width -= 1
    width = min(width, n)
    offsets = np.arange(width)
    rows, cols, vals = [], [], []
    for i in range(n):
        start = min(max(i - width // 2, 0), n - width)
        idx = start + offsets
        w = fornberg_weights(float(i), idx.astype(float), deriv) / h**deriv
        rows.extend([i] * width)
        cols.extend(idx)
        vals.extend(w)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    _FD_CACHE[key] = mat
    return mat


def eta_derivative(f, h: float, deriv: int = 1, order: int = 4, axis: int = 0) -> np.ndarray:
    """Finite-difference derivative of node profiles along ``axis``."""
    f = np.moveaxis(np.asarray(f), axis, 0)
    n = f.shape[0]
    flat = f.reshape(n, -1)
    out = fd_matrix(n, h, deriv, order) @ flat
    return np.moveaxis(out.reshape(f.shape), 0, axis)
