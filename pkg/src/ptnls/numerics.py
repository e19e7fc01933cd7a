"""Grid, unitary Fourier transform, quadrature and the MacDonald function K0.

Position arrays are stored centred: sample ``(i, j)`` sits at
``((i - n/2) dx, (j - n/2) dx)`` so the origin is the sample ``(n/2, n/2)``.
Spectral arrays are stored in FFT order (``k = 2*pi*fftfreq(n, dx)``).
The transform pair is normalised so that

    sum |u|^2 dx^2 == sum |u_hat|^2 dk^2,

i.e. it is the discrete counterpart of ``F u(k) = (1/2pi) int u(x) e^{-ik.x} dx``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft
from scipy import integrate, special

EULER_GAMMA = float(np.euler_gamma)

POSITION = "position"
_WORKERS = -1


def set_threads(n: int) -> None:
    """Worker count for the FFTs (``-1``: all cores)."""
    global _WORKERS
    _WORKERS = int(n) if n else -1

SPECTRAL = "spectral"


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic ``n x n`` grid on ``[-L, L)^2``."""

    n: int
    half_extent: float

    def __post_init__(self):
        n = int(self.n)
        if n < 16 or n & (n - 1):
            raise ValueError(f"n must be a power of two >= 16, got {self.n}")
        if not self.half_extent > 0:
            raise ValueError("half_extent must be positive")

    @property
    def dx(self) -> float:
        return 2.0 * self.half_extent / self.n

    @property
    def dk(self) -> float:
        return math.pi / self.half_extent

    @property
    def k_max(self) -> float:
        return math.pi / self.dx

    @property
    def origin_index(self) -> tuple[int, int]:
        return (self.n // 2, self.n // 2)

    @cached_property
    def x1d(self) -> np.ndarray:
        return (np.arange(self.n) - self.n // 2) * self.dx

    @cached_property
    def k1d(self) -> np.ndarray:
        return 2.0 * np.pi * sfft.fftfreq(self.n, d=self.dx)

    @cached_property
    def xy(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x1d, self.x1d, indexing="ij")

    @cached_property
    def r2(self) -> np.ndarray:
        x, y = self.xy
        return x * x + y * y

    @cached_property
    def r(self) -> np.ndarray:
        return np.sqrt(self.r2)

    @cached_property
    def kxy(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.k1d, self.k1d, indexing="ij")

    @cached_property
    def k2(self) -> np.ndarray:
        kx, ky = self.kxy
        return kx * kx + ky * ky

    def to_dict(self) -> dict:
        return {"n": self.n, "half_extent": self.half_extent, "dx": self.dx, "dk": self.dk}


def default_grid(n: int = 512, lambda_ref: float = 1.0) -> GridSpec:
    """Production grid: ``L = max(20, 20/sqrt(lambda_ref))``."""
    return GridSpec(n, max(20.0, 20.0 / math.sqrt(lambda_ref)))


@dataclass(frozen=True)
class ComplexField:
    """Complex samples on a grid, tagged with their representation."""

    values: np.ndarray
    grid: GridSpec
    rep: str = POSITION
    _checked: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        if self.rep not in (POSITION, SPECTRAL):
            raise ValueError(f"unknown representation {self.rep!r}")
        if self.values.shape != (self.grid.n, self.grid.n):
            raise ValueError("field shape does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field has non-finite entries")


def fft(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Position (centred) -> spectral (FFT order), unitary with dx^2/dk^2 weights."""
    return sfft.fft2(sfft.ifftshift(u), workers=_WORKERS) * (grid.dx**2 / (2.0 * np.pi))


def ifft(u_hat: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Spectral (FFT order) -> position (centred)."""
    return sfft.fftshift(sfft.ifft2(u_hat, workers=_WORKERS)) * (grid.n**2 * grid.dk**2 / (2.0 * np.pi))


def forward_transform(f: ComplexField) -> ComplexField:
    if f.rep != POSITION:
        raise ValueError("forward_transform expects a position field")
    return ComplexField(fft(f.values, f.grid), f.grid, SPECTRAL)


def inverse_transform(f: ComplexField) -> ComplexField:
    if f.rep != SPECTRAL:
        raise ValueError("inverse_transform expects a spectral field")
    return ComplexField(ifft(f.values, f.grid), f.grid, POSITION)


def integrate_field(values, grid: GridSpec, weight=None) -> complex:
    """``sum(values * weight) dx^2`` over the grid."""
    if isinstance(values, ComplexField):
        if values.rep != POSITION:
            raise ValueError("integrate needs a position field")
        values = values.values
    values = np.asarray(values)
    if values.shape != (grid.n, grid.n):
        raise ValueError("shape mismatch between field and grid")
    if weight is not None:
        weight = np.asarray(weight)
        if weight.shape != values.shape:
            raise ValueError("shape mismatch between field and weight")
        values = values * weight
    return complex(np.sum(values) * grid.dx**2)


def spectral_inner(u_hat: np.ndarray, v_hat: np.ndarray, grid: GridSpec) -> complex:
    """``<u, v>`` (antilinear in u) from spectral samples."""
    return complex(np.vdot(u_hat, v_hat) * grid.dk**2)


# --- MacDonald function K0 -------------------------------------------------

_K0_SMALL = 2.0
_K0_LARGE = 25.0


def _k0_series(x: float) -> float:
    # K0(x) = -(ln(x/2)+gamma) I0(x) + sum_k (x^2/4)^k/(k!)^2 H_k
    t = 0.25 * x * x
    term = 1.0
    i0 = 1.0
    s = 0.0
    harmonic = 0.0
    for k in range(1, 60):
        term *= t / (k * k)
        harmonic += 1.0 / k
        i0 += term
        s += term * harmonic
        if term < 1e-18 * i0:
            break
    return -(math.log(0.5 * x) + EULER_GAMMA) * i0 + s


def _k0_asymptotic(x: float) -> float:
    # Hankel expansion with mu = 0: prod (2j-1)^2 / (j! (8x)^j)
    total = 1.0
    term = 1.0
    for j in range(1, 40):
        new = -term * (2 * j - 1) ** 2 / (j * 8.0 * x)
        if abs(new) > abs(term):
            break
        term = new
        total += term
        if abs(term) < 1e-17:
            break
    return math.sqrt(math.pi / (2.0 * x)) * math.exp(-x) * total


def _k0_quad(x: float) -> float:
    # K0(x) = int_0^inf exp(-x cosh t) dt; scaled to avoid underflow
    f = lambda t: math.exp(-x * (math.cosh(t) - 1.0))
    upper = math.acosh(1.0 + 50.0 / x)
    val, _ = integrate.quad(f, 0.0, upper, epsabs=0.0, epsrel=1e-13, limit=200)
    return val * math.exp(-x)


def macdonald_k0(x: float) -> float:
    """Modified Bessel function of the second kind, order zero."""
    x = float(x)
    if not x > 0:
        raise ValueError("K0 is defined for x > 0 only")
    if x > 745.0:
        return 0.0
    if x < _K0_SMALL:
        return _k0_series(x)
    if x > _K0_LARGE:
        return _k0_asymptotic(x)
    return _k0_quad(x)


def k0_array(x: np.ndarray) -> np.ndarray:
    """Vectorised K0 for grid work (scipy backend, validated against ``macdonald_k0``)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("K0 is defined for x > 0 only")
    return special.k0(x)


def log_cell_average(h: float) -> float:
    """Average of ``ln|x|`` over the square ``[-h, h]^2``."""
    # int_{[-1,1]^2} ln|x| dx / 4 = ln(2)/2 + pi/4 - 3/2
    return math.log(h) + 0.5 * math.log(2.0) + 0.25 * math.pi - 1.5
