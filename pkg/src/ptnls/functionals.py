"""Scalar functionals of decomposed states."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .hamiltonian import (
    ModelParams,
    SingularState,
    form_apply,
    gamma_constant,
    gram_apply,
    green_hat,
    pair_dot,
    reconstruct,
)
from .numerics import GridSpec, fft, ifft
from .quadrature import singular_quadrature

FOUR_PI = 4.0 * math.pi


class TailMassWarning(UserWarning):
    """The state is not well contained in the box (surrogate of x psi in L^2)."""


def mass(s: SingularState) -> float:
    """``||phi||^2 + 2 Re conj(q) <G, phi> + |q|^2/(4 pi lam)``."""
    return pair_dot(s, gram_apply(s)).real


def quadratic_form(s: SingularState, alpha: float) -> float:
    """``||grad phi||^2 + lam(||phi||^2 - ||psi||^2) + Gamma^lam |q|^2``."""
    return pair_dot(s, form_apply(s, alpha)).real - s.lam * mass(s)


SINGULAR = "singular"
GRID = "grid"


def lp_norm(s: SingularState, p: float, rule: str = SINGULAR) -> float:
    """``||psi||_{p+1}^{p+1}``.

    ``rule="singular"`` integrates the represented function accurately
    (log core resolved by a polar rule); ``rule="grid"`` is the plain sum
    over the band-limited grid field, the quantity the split-step scheme
    conserves exactly.
    """
    if rule == GRID:
        return float(np.sum(np.abs(reconstruct(s)) ** (p + 1))) * s.grid.dx**2
    if rule != SINGULAR:
        raise ValueError(f"unknown quadrature rule {rule!r}")
    quad = singular_quadrature(s.grid, s.lam)
    return quad.lp(ifft(s.phi_hat, s.grid), s.q, p)


def power_weak(s: SingularState, p: float):
    """Pair-space representative of ``|psi|^{p-1} psi``.

    Returns ``(top, bottom)`` such that ``pair_dot(v, (top, bottom))`` is
    ``<v, |psi|^{p-1} psi>`` evaluated with the same quadrature as
    ``lp_norm``; it is the exact gradient of ``lp_norm / ((p+1)/2)``.
    """
    grid = s.grid
    quad = singular_quadrature(grid, s.lam)
    g_phi, g_q = quad.gradient(ifft(s.phi_hat, grid), s.q, p)
    return fft(g_phi, grid) / grid.dx**2, g_q


def charge_sq(s: SingularState) -> float:
    return abs(s.q) ** 2


def energy(s: SingularState, params: ModelParams, *, lp: float | None = None, rule: str = SINGULAR) -> float:
    if lp is None:
        lp = lp_norm(s, params.p, rule)
    return 0.5 * quadratic_form(s, params.alpha) + params.g / (params.p + 1) * lp


def action(s: SingularState, params: ModelParams, *, lp: float | None = None, rule: str = SINGULAR) -> float:
    return energy(s, params, lp=lp, rule=rule) + 0.5 * params.omega * mass(s)


def nehari(s: SingularState, params: ModelParams, *, lp: float | None = None, rule: str = SINGULAR) -> float:
    """Nehari functional (written for the attractive sign)."""
    if lp is None:
        lp = lp_norm(s, params.p, rule)
    return quadratic_form(s, params.alpha) + params.omega * mass(s) - lp


def q_functional(
    s: SingularState,
    params: ModelParams,
    *,
    lp: float | None = None,
    with_charge: bool = True,
    rule: str = SINGULAR,
) -> float:
    """Virial functional ``F + g (p-1)/(p+1) ||psi||^{p+1} + |q|^2/(4 pi)``.

    ``with_charge=False`` drops the point-interaction term (ablation only).
    """
    if lp is None:
        lp = lp_norm(s, params.p, rule)
    p = params.p
    out = quadratic_form(s, params.alpha) + params.g * (p - 1) / (p + 1) * lp
    if with_charge:
        out += charge_sq(s) / FOUR_PI
    return out


def tail_mass_fraction(psi: np.ndarray, grid: GridSpec) -> float:
    dens = np.abs(psi) ** 2
    total = float(dens.sum())
    if total == 0:
        return 0.0
    return float(dens[grid.r > 0.5 * grid.half_extent].sum()) / total


def _check_tail(psi, grid, tol=1e-6):
    frac = tail_mass_fraction(psi, grid)
    if frac > tol:
        warnings.warn(
            f"tail mass fraction {frac:.2e} outside r = L/2 exceeds {tol:g}",
            TailMassWarning,
            stacklevel=3,
        )
    return frac


def variance(s: SingularState, psi: np.ndarray | None = None, check: bool = True) -> float:
    """``int |x|^2 |psi|^2``."""
    if psi is None:
        psi = reconstruct(s)
    if check:
        _check_tail(psi, s.grid)
    return float(np.sum(s.grid.r2 * np.abs(psi) ** 2)) * s.grid.dx**2


def x_grad_green_hat(lam: float, grid: GridSpec) -> np.ndarray:
    """Spectral samples of ``x . grad G^lam``: ``-(1/2pi) 2 lam / (|k|^2 + lam)^2``."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return -(1.0 / (2.0 * math.pi)) * 2.0 * lam / (grid.k2 + lam) ** 2


def div_x_green_hat(lam: float, grid: GridSpec) -> np.ndarray:
    """Spectral samples of ``div(x G^lam)``: ``(1/2pi) 2 |k|^2 / (|k|^2 + lam)^2``."""
    return (1.0 / (2.0 * math.pi)) * 2.0 * grid.k2 / (grid.k2 + lam) ** 2


def x_grad(s: SingularState) -> np.ndarray:
    """Position samples of ``x . grad psi``: spectral on phi, closed form on q G."""
    grid = s.grid
    kx, ky = grid.kxy
    x, y = grid.xy
    gx = ifft(1j * kx * s.phi_hat, grid)
    gy = ifft(1j * ky * s.phi_hat, grid)
    sing = ifft(x_grad_green_hat(s.lam, grid).astype(complex), grid)
    return x * gx + y * gy + s.q * sing


def variance_rate(s: SingularState, psi: np.ndarray | None = None, check: bool = True) -> float:
    """``4 Im int conj(psi) x . grad psi``."""
    if psi is None:
        psi = reconstruct(s)
    if check:
        _check_tail(psi, s.grid)
    return 4.0 * float(np.sum(np.conj(psi) * x_grad(s)).imag) * s.grid.dx**2


def h1_norm_sq(s: SingularState) -> float:
    return float(np.sum((1.0 + s.grid.k2) * np.abs(s.phi_hat) ** 2)) * s.grid.dk**2


def d_half_norm(s: SingularState) -> float:
    """Surrogate ``sqrt(||phi^lam||_{H^1}^2 + |q|^2)`` at the stored lambda."""
    return math.sqrt(h1_norm_sq(s) + charge_sq(s))


@dataclass(frozen=True)
class FunctionalReport:
    mass: float
    form: float
    energy: float
    action: float
    nehari: float
    qvir: float
    variance: float
    varianceRate: float
    lpNorm: float
    chargeSq: float
    dHalfNorm: float
    lam: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def columns(cls) -> list[str]:
        return list(cls.__dataclass_fields__)


def report(
    s: SingularState, params: ModelParams, check_tail: bool = False, rule: str = SINGULAR
) -> FunctionalReport:
    """All functionals from one reconstruction."""
    psi = reconstruct(s)
    lp = lp_norm(s, params.p, rule)
    m = mass(s)
    form = quadratic_form(s, params.alpha)
    en = 0.5 * form + params.g / (params.p + 1) * lp
    p = params.p
    return FunctionalReport(
        mass=m,
        form=form,
        energy=en,
        action=en + 0.5 * params.omega * m,
        nehari=form + params.omega * m - lp,
        qvir=form + params.g * (p - 1) / (p + 1) * lp + charge_sq(s) / FOUR_PI,
        variance=variance(s, psi, check=check_tail),
        varianceRate=variance_rate(s, psi, check=check_tail),
        lpNorm=lp,
        chargeSq=charge_sq(s),
        dHalfNorm=d_half_norm(s),
        lam=s.lam,
    )


def norm_equivalence_ratio(s: SingularState, mu: float) -> float:
    """``dHalfNorm`` at ``mu`` over ``dHalfNorm`` at the stored lambda."""
    from .hamiltonian import change_lambda

    return d_half_norm(change_lambda(s, mu)) / d_half_norm(s)


def form_plus_shift(s: SingularState, alpha: float, shift: float) -> float:
    """``F_alpha(psi) + shift ||psi||^2``; positive for ``shift > -E_alpha``."""
    return quadratic_form(s, alpha) + shift * mass(s)


__all__ = [
    "FunctionalReport",
    "TailMassWarning",
    "action",
    "charge_sq",
    "d_half_norm",
    "div_x_green_hat",
    "energy",
    "form_plus_shift",
    "gamma_constant",
    "green_hat",
    "lp_norm",
    "mass",
    "nehari",
    "norm_equivalence_ratio",
    "power_weak",
    "q_functional",
    "quadratic_form",
    "report",
    "variance",
    "variance_rate",
    "x_grad",
    "x_grad_green_hat",
]
