"""Point-interaction Hamiltonian on the grid.

A state is a pair ``(phi_hat, q)`` at a decomposition parameter ``lam``:

    psi = phi^lam + q G^lam,

with ``phi_hat`` the spectral samples of the regular part and ``G^lam`` the
exact continuum Green's function.  The pair space is spanned by the lattice
Fourier modes plus one extra direction, the part of ``G^lam`` beyond the
grid cutoff.  Its Gram matrix ``M`` and the form matrix ``A`` are

    <c, M c> = ||phi||^2 + 2 Re conj(q) <G^lam, phi> + |q|^2 / (4 pi lam)
    <c, A c> = ||grad phi||^2 + lam ||phi||^2 + Gamma^lam_alpha |q|^2

so mass and the quadratic form use the continuum closed forms, and the
operator is ``H + lam = M^{-1} A``.  Resolvents are exact solves of
``(A + (z - lam) M) x = M b``; at real ``z = lam`` this is the Krein formula.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .numerics import (
    EULER_GAMMA,
    POSITION,
    SPECTRAL,
    ComplexField,
    GridSpec,
    fft,
    ifft,
    k0_array,
    log_cell_average,
)

TWO_PI = 2.0 * math.pi


class ResonanceError(ArithmeticError):
    """Raised when the Krein denominator vanishes (z at the bound state)."""


class NotH2Error(ValueError):
    """Raised when the regular part is too rough for the operator action."""


@dataclass(frozen=True)
class ModelParams:
    alpha: float
    p: float = 5.0
    g: int = -1
    omega: float = 1.0

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if self.g not in (-1, 0, 1):
            raise ValueError("g must be -1, 0 or +1")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "p": self.p, "g": self.g, "omega": self.omega}


@dataclass(frozen=True)
class SingularState:
    phi_hat: np.ndarray
    q: complex
    lam: float
    grid: GridSpec

    def __post_init__(self):
        if not (isinstance(self.lam, (int, float, np.floating)) and self.lam > 0):
            raise ValueError("stored states need a real lambda > 0")
        if self.phi_hat.shape != (self.grid.n, self.grid.n):
            raise ValueError("phi_hat shape does not match grid")
        if not (np.all(np.isfinite(self.phi_hat)) and cmath.isfinite(complex(self.q))):
            raise ValueError("state has non-finite entries")

    # pair arithmetic at a common lambda
    def _check(self, other: "SingularState"):
        if other.grid != self.grid or other.lam != self.lam:
            raise ValueError("states must share grid and lambda; use change_lambda")

    def __add__(self, other):
        self._check(other)
        return SingularState(self.phi_hat + other.phi_hat, self.q + other.q, self.lam, self.grid)

    def __sub__(self, other):
        self._check(other)
        return SingularState(self.phi_hat - other.phi_hat, self.q - other.q, self.lam, self.grid)

    def __mul__(self, c):
        return SingularState(self.phi_hat * c, self.q * c, self.lam, self.grid)

    __rmul__ = __mul__

    def conj(self) -> "SingularState":
        # complex conjugation of psi in position space
        phi = np.conj(ifft(self.phi_hat, self.grid))
        return SingularState(fft(phi, self.grid), complex(np.conj(self.q)), self.lam, self.grid)


def zero_state(grid: GridSpec, lam: float = 1.0) -> SingularState:
    return SingularState(np.zeros((grid.n, grid.n), complex), 0j, lam, grid)


def regular_state(values: np.ndarray, grid: GridSpec, lam: float = 1.0) -> SingularState:
    """State with ``q = 0`` from position samples of a regular function."""
    return SingularState(fft(np.asarray(values, complex), grid), 0j, lam, grid)


# --- Green's function and Gamma ---------------------------------------------


def _check_cut(lam):
    lam = complex(lam)
    if lam.imag == 0 and lam.real <= 0:
        raise ValueError(f"spectral parameter {lam.real} lies on the branch cut (-inf, 0]")


def green_hat(lam, grid: GridSpec) -> np.ndarray:
    """Spectral samples ``(1/2pi) / (|k|^2 + lam)``."""
    _check_cut(lam)
    if isinstance(lam, complex) and lam.imag != 0:
        return (1.0 / TWO_PI) / (grid.k2 + lam)
    return (1.0 / TWO_PI) / (grid.k2 + float(np.real(lam)))


def green_function(lam, grid: GridSpec) -> ComplexField:
    return ComplexField(green_hat(lam, grid).astype(complex), grid, SPECTRAL)


def green_samples(lam: float, grid: GridSpec) -> np.ndarray:
    """Continuum ``(1/2pi) K0(sqrt(lam) r)`` on the grid, origin by its cell average."""
    _check_cut(lam)
    r = grid.r.copy()
    i0, j0 = grid.origin_index
    r[i0, j0] = 1.0
    out = k0_array(math.sqrt(lam) * r) / TWO_PI
    out[i0, j0] = origin_cell_average(lam, grid.dx)
    return out


def origin_cell_average(lam: float, dx: float) -> float:
    """Average of ``G^lam`` over the origin cell, from the log asymptotics."""
    h = 0.5 * dx
    # O((sqrt(lam) h)^2 log) correction is below 1e-4 relative for resolved grids
    return -(math.log(0.5 * math.sqrt(lam)) + log_cell_average(h) + EULER_GAMMA) / TWO_PI


def gamma_constant(alpha: float, lam) -> complex | float:
    """``Gamma^lam_alpha = alpha + gamma/2pi + ln(sqrt(lam)/2)/2pi`` (principal branch)."""
    _check_cut(lam)
    if isinstance(lam, complex) and lam.imag != 0:
        return alpha + EULER_GAMMA / TWO_PI + cmath.log(cmath.sqrt(lam) / 2.0) / TWO_PI
    return alpha + EULER_GAMMA / TWO_PI + math.log(math.sqrt(float(np.real(lam))) / 2.0) / TWO_PI


def bound_state_energy(alpha: float) -> float:
    return -4.0 * math.exp(-2.0 * (TWO_PI * alpha + EULER_GAMMA))


def green_tail_norm2(lam: float, grid: GridSpec) -> float:
    """``||G^lam||^2`` carried beyond the lattice: ``1/(4 pi lam) - sum |G_hat|^2 dk^2``."""
    gh = green_hat(lam, grid)
    return 1.0 / (4.0 * math.pi * lam) - float(np.sum(gh * gh)) * grid.dk**2


# --- pair-space linear algebra ---------------------------------------------


def gram_apply(s: SingularState) -> tuple[np.ndarray, complex]:
    """``M c`` as (spectral array, scalar)."""
    g = green_hat(s.lam, s.grid)
    dk2 = s.grid.dk**2
    top = s.phi_hat + g * s.q
    bottom = complex(np.sum(g * s.phi_hat) * dk2) + s.q / (4.0 * math.pi * s.lam)
    return top, bottom


def form_apply(s: SingularState, alpha: float) -> tuple[np.ndarray, complex]:
    """``A c`` as (spectral array, scalar)."""
    return (s.grid.k2 + s.lam) * s.phi_hat, gamma_constant(alpha, s.lam) * s.q


def pair_dot(a: SingularState, rhs: tuple[np.ndarray, complex]) -> complex:
    """Coordinate pairing ``a^* rhs``."""
    return complex(np.vdot(a.phi_hat, rhs[0]) * a.grid.dk**2 + np.conj(a.q) * rhs[1])


def solve_shifted(rhs: tuple[np.ndarray, complex], mu, lam: float, alpha: float, grid: GridSpec):
    """Solve ``(A + (mu - lam) M) x = rhs`` in the pair space at ``lam``.

    Returns ``(phi_hat, q)``.  Raises ResonanceError when the scalar Krein
    denominator vanishes.
    """
    _check_cut(mu)
    r_phi, r_q = rhs
    d = mu - lam
    g = green_hat(lam, grid)
    dk2 = grid.dk**2
    denom_k = grid.k2 + mu
    r0 = r_phi / denom_k
    gamma = gamma_constant(alpha, lam)
    m = 1.0 / (4.0 * math.pi * lam)
    if d == 0:
        den = gamma
        q = r_q / den if den != 0 else None
        if q is None:
            raise ResonanceError("Gamma vanishes at this spectral parameter")
        return r0, complex(q)
    s1 = complex(np.sum(g * r0) * dk2)
    s2 = complex(np.sum(g * g / denom_k) * dk2)
    den = gamma + d * m - d * d * s2
    if abs(den) < 1e-14 * (abs(gamma) + abs(d * m) + 1.0):
        raise ResonanceError("Krein denominator vanishes: z is at the bound state")
    q = (r_q - d * s1) / den
    phi = r0 - (d * q) * (g / denom_k)
    return phi, complex(q)


def apply_hv_shifted(s: SingularState, alpha: float, shift) -> SingularState:
    """``(H + shift) s`` in the pair space."""
    a_top, a_q = form_apply(s, alpha)
    m_top, m_q = gram_apply(s)
    d = shift - s.lam
    r = (a_top + d * m_top, a_q + d * m_q)
    return _m_inverse(r, s.lam, s.grid)


def _m_inverse(r, lam, grid) -> SingularState:
    # M^{-1}: M = [[I, g], [g^*, m]] with Schur complement tau = m - ||g||^2
    g = green_hat(lam, grid)
    dk2 = grid.dk**2
    tau = green_tail_norm2(lam, grid)
    q = (r[1] - complex(np.sum(g * r[0]) * dk2)) / tau
    phi = r[0] - g * q
    return SingularState(phi, complex(q), lam, grid)


# --- states -----------------------------------------------------------------


def reconstruct(s: SingularState) -> np.ndarray:
    """Position samples of ``psi`` (band-limited: the grid part of ``phi + q G``)."""
    return ifft(s.phi_hat + s.q * green_hat(s.lam, s.grid), s.grid)


def reconstruct_field(s: SingularState) -> ComplexField:
    return ComplexField(reconstruct(s), s.grid, POSITION)


def change_lambda(s: SingularState, mu: float, alpha: float | None = None) -> SingularState:
    """Same ``psi``, decomposed at ``mu``: ``phi^mu = phi^lam + q (G^lam - G^mu)``."""
    if not mu > 0:
        raise ValueError("new lambda must be positive")
    if alpha is not None and math.isclose(mu, -bound_state_energy(alpha), rel_tol=1e-12):
        raise ValueError("lambda = -E_alpha is not an admissible decomposition parameter")
    if mu == s.lam:
        return s
    dg = green_hat(s.lam, s.grid) - green_hat(mu, s.grid)
    return SingularState(s.phi_hat + s.q * dg, s.q, float(mu), s.grid)


def bound_state_profile(alpha: float, lam: float, grid: GridSpec) -> SingularState:
    """``psi_alpha = G^{lam0}`` with ``lam0 = -E_alpha``, decomposed at ``lam``."""
    lam0 = -bound_state_energy(alpha)
    if math.isclose(lam, lam0, rel_tol=1e-12):
        raise ValueError("lambda = -E_alpha is not an admissible decomposition parameter")
    phi = green_hat(lam0, grid) - green_hat(lam, grid)
    return SingularState(phi.astype(complex), 1.0 + 0j, float(lam), grid)


@lru_cache(maxsize=32)
def cutoff_mode(alpha: float, lam: float, grid: GridSpec) -> tuple[float, SingularState]:
    """The eigenpair of ``H`` above the lattice band.

    The extra pair-space direction adds one eigenvalue beyond
    ``max |k|^2``: the whole continuum above the cutoff lumped into a single
    mode.  Its normalised eigenvector carries a charge of order ``k_max``,
    so a tiny mass overlap with it shows up as a large, coherent oscillation
    of ``q``.  Returns ``(energy, unit-mass eigenvector)``.
    """
    g = green_hat(lam, grid)
    dk2 = grid.dk**2
    shifted = grid.k2 + lam
    gam = float(gamma_constant(alpha, lam))
    g2 = g * g

    def secular(e):
        return e / (4.0 * math.pi * lam) + e * e * float(np.sum(g2 / (shifted - e))) * dk2 - gam

    lo = float(shifted.max()) * (1.0 + 1e-12)
    tau = green_tail_norm2(lam, grid)
    if not tau > 0:
        raise ValueError(
            f"box too small for lam = {lam:.6g}: periodic images outweigh the Green tail, "
            "the pair-space Gram matrix is not positive (enlarge half_extent * sqrt(lam))"
        )
    hi = 2.0 * (abs(gam) + float(np.sum(g2 * shifted)) * dk2) / tau + 2.0 * lo
    while secular(hi) <= 0:
        hi *= 2.0
    e = brentq(secular, lo, hi, xtol=1e-14 * hi, rtol=1e-15, maxiter=500)
    v = SingularState((e * g / (shifted - e)).astype(complex), 1.0 + 0j, float(lam), grid)
    norm2 = pair_dot(v, gram_apply(v)).real
    return e - lam, v * (1.0 / math.sqrt(norm2))


def remove_cutoff_mode(s: SingularState, alpha: float) -> tuple[SingularState, float]:
    """Mass-orthogonal projection off ``cutoff_mode``; returns the mass removed."""
    _, v = cutoff_mode(alpha, s.lam, s.grid)
    c = pair_dot(v, gram_apply(s))
    return s - v * c, abs(c) ** 2


def apply_hamiltonian(s: SingularState, tail_tol: float = 1e-6) -> np.ndarray:
    """Position samples of ``H psi = -Lap phi - lam q G^lam`` (operator-domain action)."""
    lap = s.grid.k2 * s.phi_hat
    total = float(np.sum(np.abs(lap) ** 2))
    if total > 0:
        outer = s.grid.k2 > (0.8 * s.grid.k_max) ** 2
        if float(np.sum(np.abs(lap[outer]) ** 2)) > tail_tol * total:
            raise NotH2Error("regular part is not resolved in H^2 on this grid")
    return ifft(lap - s.lam * s.q * green_hat(s.lam, s.grid), s.grid)


def apply_resolvent(
    z,
    source,
    alpha: float,
    lam: float | None = None,
) -> SingularState:
    """``(H_alpha + z)^{-1} source``.

    ``source`` is a position ``ComplexField``/array (a regular grid function)
    or a ``SingularState``.  The output is stored at ``lam``; by default
    ``lam = z`` for real positive ``z`` (the plain Krein formula) and
    ``max(1, 2|E_alpha|)`` otherwise.
    """
    _check_cut(z)
    z = complex(z)
    real_z = z.imag == 0
    if isinstance(source, SingularState):
        if lam is not None and lam != source.lam:
            source = change_lambda(source, lam)
        lam = source.lam
        rhs = gram_apply(source)
        grid = source.grid
    else:
        if isinstance(source, ComplexField):
            if source.rep != POSITION:
                raise ValueError("resolvent source must be a position field")
            grid, values = source.grid, source.values
        else:
            raise TypeError("source must be a ComplexField or SingularState")
        if lam is None:
            lam = z.real if (real_z and z.real > 0) else max(1.0, 2.0 * abs(bound_state_energy(alpha)))
        u_hat = fft(values, grid)
        g = green_hat(lam, grid)
        rhs = (u_hat, complex(np.sum(g * u_hat) * grid.dk**2))
    mu = z.real if real_z else z
    if real_z and mu == lam:
        mu = float(lam)
    phi, q = solve_shifted(rhs, mu, float(lam), alpha, grid)
    return SingularState(phi, q, float(lam), grid)
