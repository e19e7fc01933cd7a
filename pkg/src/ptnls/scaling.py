"""Mass-preserving dilation ``T^sigma psi(x) = sigma psi(sigma x)`` and the sigma calculus.

Under ``T^sigma`` the charge becomes ``sigma q`` and the decomposition
parameter ``lam sigma^2``, the form picks up a logarithm,

    F(psi^sigma) = sigma^2 F(psi) + (|q|^2 / 2 pi) sigma^2 log sigma,

and ``||psi^sigma||_{p+1}^{p+1} = sigma^{p-1} ||psi||_{p+1}^{p+1}``.  With

    A = F + |q|^2/(4 pi),  B = |q|^2/(2 pi),  C = (p-1)/(p+1) ||psi||_{p+1}^{p+1}

the action along the orbit is, for the attractive case,

    S(sigma) = (sigma^2/2) F + (B/2) sigma^2 log sigma - C sigma^{p-1}/(p-1) + (omega/2) M,

so ``S' = A sigma + B sigma log sigma - C sigma^{p-2}`` and ``Q(psi^sigma) = sigma S'``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import functionals as fn
from .hamiltonian import ModelParams, SingularState
from .numerics import GridSpec
from .radial import RadialMesh, RadialState

TWO_PI = 2.0 * math.pi


class ScaleRangeError(ValueError):
    """The dilated state does not fit the grid."""


class NoRootError(ArithmeticError):
    pass


# --- the dilation ------------------------------------------------------------


def _spectral_dilation_matrix(grid: GridSpec, sigma: float) -> np.ndarray:
    """``E[m, j] = exp(-i (k_m / sigma) x_j)`` zeroed where ``|k_m/sigma| > k_max``."""
    kk = grid.k1d / sigma
    e = np.exp(-1j * np.outer(kk, grid.x1d))
    e[np.abs(kk) > grid.k_max] = 0.0
    return e


def scale_grid_state(s: SingularState, sigma: float) -> SingularState:
    """``T^sigma`` on a grid state.

    ``phi_hat^sigma(k) = phi_hat(k/sigma)/sigma`` with ``phi_hat`` evaluated
    off the lattice as the continuous transform of the samples (separable
    sums), zero beyond the band.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if sigma == 1.0:
        return s
    grid = s.grid
    lam = s.lam * sigma**2
    if not (grid.dk <= math.sqrt(lam) <= grid.k_max / 4):
        raise ScaleRangeError(f"sqrt(lam sigma^2) = {math.sqrt(lam):.4g} outside [dk, k_max/4] for this grid")
    from .numerics import ifft

    phi = ifft(s.phi_hat, grid)
    e = _spectral_dilation_matrix(grid, sigma)
    phi_hat = (e @ phi @ e.T) * (grid.dx**2 / TWO_PI) / sigma
    return SingularState(phi_hat, sigma * s.q, float(lam), grid)


def scale_radial(s: RadialState, sigma: float) -> RadialState:
    """Exact ``T^sigma`` on a radial profile: the mesh is relabelled."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    m = s.mesh
    mesh = RadialMesh(m.kappa * sigma, m.order, m.width, m.r_max, m.core, m.depth)
    return RadialState(mesh, sigma * s.phi, sigma**2 * s.dphi, sigma * s.q)


def apply_scaling(s, sigma: float):
    """``T^sigma`` for grid states and radial profiles."""
    if isinstance(s, RadialState):
        return scale_radial(s, sigma)
    return scale_grid_state(s, sigma)


def scaled_alpha_shift(alpha: float, sigma: float) -> float:
    """``alpha - log(sigma)/(2 pi)``: the operator domain that ``T^sigma`` maps into."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return alpha - math.log(sigma) / TWO_PI


def scaling_form_identity(s: SingularState, alpha: float, sigma: float) -> tuple[float, float]:
    """``(F(T^sigma s), sigma^2 F(s) + |q|^2/(2 pi) sigma^2 log sigma)``."""
    lhs = fn.quadratic_form(scale_grid_state(s, sigma), alpha)
    rhs = sigma**2 * fn.quadratic_form(s, alpha) + abs(s.q) ** 2 / TWO_PI * sigma**2 * math.log(sigma)
    return lhs, rhs


# --- constants and closed forms ----------------------------------------------


@dataclass(frozen=True)
class ABC:
    A: float
    B: float
    C: float

    @property
    def degenerate(self) -> bool:
        return self.B == 0.0


def abc_from_report(rep: fn.FunctionalReport, p: float) -> ABC:
    return ABC(
        A=rep.form + rep.chargeSq / fn.FOUR_PI,
        B=rep.chargeSq / TWO_PI,
        C=(p - 1) / (p + 1) * rep.lpNorm,
    )


def abc_constants(s, params: ModelParams, rule: str = fn.SINGULAR) -> ABC:
    """``A, B, C`` of a grid state, a radial profile or a ``FunctionalReport``."""
    if isinstance(s, fn.FunctionalReport):
        return abc_from_report(s, params.p)
    if isinstance(s, RadialState):
        from .groundstate import radial_report

        return abc_from_report(radial_report(s, params), params.p)
    return abc_from_report(fn.report(s, params, rule=rule), params.p)


def _xlogx(sigma, power=1):
    sigma = np.asarray(sigma, dtype=float)
    return sigma**power * np.log(sigma)


def action_along_scaling(c: ABC, mass_term: float, p: float, sigma, order: int = 0):
    """``S(psi^sigma)`` (order 0) or its ``order``-th sigma derivative, 1 to 3.

    ``mass_term`` is ``(omega/2) ||psi||^2``.  The form enters through
    ``F = A - B/2``.
    """
    sig = np.asarray(sigma, dtype=float)
    if np.any(sig <= 0):
        raise ValueError("sigma must be positive")
    A, B, C = c.A, c.B, c.C
    if order == 0:
        F = A - 0.5 * B
        out = 0.5 * sig**2 * F + 0.5 * B * _xlogx(sig, 2) - C * sig ** (p - 1) / (p - 1) + mass_term
    elif order == 1:
        out = A * sig + B * _xlogx(sig) - C * sig ** (p - 2)
    elif order == 2:
        out = (A + B) + B * np.log(sig) - C * (p - 2) * sig ** (p - 3)
    elif order == 3:
        out = B / sig - C * (p - 2) * (p - 3) * sig ** (p - 4)
    else:
        raise ValueError("order must be 0, 1, 2 or 3")
    return out if np.ndim(out) else float(out)


def q_along_scaling(c: ABC, p: float, sigma):
    """``Q(psi^sigma) = A sigma^2 + B sigma^2 log sigma - C sigma^{p-1}``."""
    sig = np.asarray(sigma, dtype=float)
    out = c.A * sig**2 + c.B * _xlogx(sig, 2) - c.C * sig ** (p - 1)
    return out if np.ndim(out) else float(out)


def q_derivative_along_scaling(c: ABC, p: float, sigma):
    """``dQ(psi^sigma)/dsigma`` in closed form."""
    sig = np.asarray(sigma, dtype=float)
    out = 2 * c.A * sig + c.B * (2 * _xlogx(sig) + sig) - c.C * (p - 1) * sig ** (p - 2)
    return out if np.ndim(out) else float(out)


def g_function(c: ABC, mass_term: float, p: float, sigma, order: int = 0):
    """``g(sigma) = S(psi^sigma) - (sigma^2/2) Q(psi)`` and its first two derivatives."""
    q1 = c.A - c.C
    sig = np.asarray(sigma, dtype=float)
    if order == 0:
        out = action_along_scaling(c, mass_term, p, sig) - 0.5 * sig**2 * q1
    elif order == 1:
        out = action_along_scaling(c, mass_term, p, sig, 1) - sig * q1
    elif order == 2:
        out = action_along_scaling(c, mass_term, p, sig, 2) - q1
    else:
        raise ValueError("order must be 0, 1 or 2")
    return out if np.ndim(out) else float(out)


def _g_reduced(A: float, B: float, p: float, sigma: float) -> float:
    """``g'(sigma)/sigma`` written with ``C = A`` (ground states)."""
    return B * math.log(sigma) - A * (sigma ** (p - 3) - 1.0)


@dataclass(frozen=True)
class SigmaStar:
    value: float
    degenerate: bool
    residual: float


def sigma_star_root(A: float, B: float, p: float, xtol: float = 1e-14) -> SigmaStar:
    """The root in ``(0, 1)`` of ``B log sigma - A (sigma^{p-3} - 1)``.

    Exists iff ``0 < B < A (p-3)``; with ``B = 0`` only ``sigma = 1`` remains
    and the result is flagged degenerate.
    """
    if not A > 0:
        raise ValueError("A must be positive")
    if B < 0:
        raise ValueError("B must be non-negative")
    if not p > 3:
        raise ValueError("p must exceed 3")
    if B == 0:
        return SigmaStar(1.0, True, 0.0)
    if not B < A * (p - 3):
        raise NoRootError("no root in (0,1): B >= A (p-3), so g' keeps its sign below 1")

    def h(s):
        return _g_reduced(A, B, p, s)

    # h -> -inf at 0+, h > 0 just below 1
    hi = 1.0 - 1e-3
    while h(hi) <= 0:
        hi = 1.0 - 0.5 * (1.0 - hi)
        if 1.0 - hi < 1e-15:
            raise NoRootError("could not bracket the root below 1")
    lo = hi * 0.5
    while h(lo) >= 0:
        lo *= 0.5
        if lo < 1e-300:
            raise NoRootError("could not bracket the root near 0")
    root = brentq(h, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500)
    # g'(sigma) = sigma * h(sigma)
    return SigmaStar(root, False, abs(root * h(root)))


def sigma_zero(lp_state: float, lp_ground: float, p: float) -> float:
    """``(||phi_omega||^{p+1} / ||phi||^{p+1})^{1/(p-1)}`` from the two ``L^{p+1}`` integrals."""
    if lp_state == 0 or lp_ground == 0:
        raise ZeroDivisionError("sigma_0 needs nonzero L^{p+1} norms")
    return (lp_ground / lp_state) ** (1.0 / (p - 1))


def f_function_complex(p: float, s):
    """``(p-3)^2 (s^{p-1} - 2 s^{p-1} log s) - 4 (p-3) log s - 4 - (p^2-6p+5) s^{p-3}``, any dtype."""
    ls = np.log(s)
    return (p - 3) ** 2 * (s ** (p - 1) - 2 * s ** (p - 1) * ls) - 4 * (p - 3) * ls - 4 - (p * p - 6 * p + 5) * s ** (p - 3)


def f_function(p: float, sigma):
    """The auxiliary function ``f`` on real ``sigma > 0``."""
    s = np.asarray(sigma, dtype=float)
    out = f_function_complex(p, s)
    return out if np.ndim(out) else float(out)


def f_derivative(p: float, sigma):
    s = np.asarray(sigma, dtype=float)
    ls = np.log(s)
    out = (
        (p - 3) ** 2 * ((p - 1) * s ** (p - 2) - 2 * ((p - 1) * s ** (p - 2) * ls + s ** (p - 2)))
        - 4 * (p - 3) / s
        - (p * p - 6 * p + 5) * (p - 3) * s ** (p - 4)
    )
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class Monotonicity:
    p: float
    points: int
    decreasing: bool
    min_neg_derivative: float
    min_step_drop: float


def certify_f_decreasing(p: float, points: int = 10_000, lo: float = 1e-4) -> Monotonicity:
    """Sample ``f`` on ``points`` nodes of ``[lo, 1)`` and check strict decrease."""
    s = np.linspace(lo, 1.0, points + 1)[:-1]
    vals = f_function(p, s)
    drops = vals[:-1] - vals[1:]
    slope = -f_derivative(p, s)
    return Monotonicity(
        p=p,
        points=points,
        decreasing=bool(np.all(drops > 0)),
        min_neg_derivative=float(slope.min()),
        min_step_drop=float(drops.min()),
    )


# --- omega rescaling ---------------------------------------------------------


def rescaled_alpha(alpha: float, omega: float) -> float:
    """``alpha + log(omega)/(4 pi)``."""
    if not omega > 0:
        raise ValueError("omega must be positive")
    return alpha + math.log(omega) / (4.0 * math.pi)


def omega_rescale(profile, params: ModelParams):
    """``omega^{-1/(p-1)} phi(x/sqrt(omega))`` and the parameters ``(alpha_hat, omega=1)``.

    Exact on radial profiles; grid states go through ``scale_grid_state``.
    """
    omega, p = params.omega, params.p
    if not omega > 0:
        raise ValueError("omega must be positive")
    amp = omega ** (-1.0 / (p - 1))
    new = ModelParams(alpha=rescaled_alpha(params.alpha, omega), p=p, g=params.g, omega=1.0)
    sigma = 1.0 / math.sqrt(omega)
    if isinstance(profile, RadialState):
        scaled = scale_radial(profile, sigma)
    else:
        scaled = scale_grid_state(profile, sigma)
    return scaled * (amp / sigma), new


# --- sampled analysis --------------------------------------------------------


@dataclass
class SigmaAnalysis:
    A: float
    B: float
    C: float
    mass_term: float
    p: float
    sigma_grid: np.ndarray
    S: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    Q: np.ndarray
    g: np.ndarray
    f: np.ndarray
    sigma_star: float | None
    sigma_star_degenerate: bool
    sigma_zero: float | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        def arr(a):
            return [None if not np.isfinite(v) else float(v) for v in a]

        return {
            "A": self.A,
            "B": self.B,
            "C": self.C,
            "massTerm": self.mass_term,
            "p": self.p,
            "sigmaStar": self.sigma_star,
            "sigmaStarDegenerate": self.sigma_star_degenerate,
            "sigmaZero": self.sigma_zero,
            "notes": self.notes,
            "sigma": arr(self.sigma_grid),
            "S": arr(self.S),
            "dS": arr(self.S1),
            "d2S": arr(self.S2),
            "Q": arr(self.Q),
            "g": arr(self.g),
            "f": arr(self.f),
        }

    def csv_rows(self):
        yield ["sigma", "S", "dS", "d2S", "Q", "g", "f"]
        for row in zip(self.sigma_grid, self.S, self.S1, self.S2, self.Q, self.g, self.f):
            yield [repr(float(v)) for v in row]


def sigma_analysis(
    c: ABC,
    mass_term: float,
    p: float,
    sigma_min: float = 0.25,
    sigma_max: float = 4.0,
    samples: int = 801,
    sigma_zero_value: float | None = None,
) -> SigmaAnalysis:
    sig = np.linspace(sigma_min, sigma_max, samples)
    notes = []
    star, degenerate = None, False
    if p > 3 and c.A > 0:
        try:
            res = sigma_star_root(c.A, c.B, p)
            star, degenerate = res.value, res.degenerate
            if degenerate:
                notes.append("B = 0: classical scaling calculus, sigma* degenerates to 1")
        except NoRootError as exc:
            notes.append(str(exc))
    fcurve = f_function(p, sig) if p > 3 else np.full_like(sig, np.nan)
    return SigmaAnalysis(
        A=c.A,
        B=c.B,
        C=c.C,
        mass_term=mass_term,
        p=p,
        sigma_grid=sig,
        S=action_along_scaling(c, mass_term, p, sig),
        S1=action_along_scaling(c, mass_term, p, sig, 1),
        S2=action_along_scaling(c, mass_term, p, sig, 2),
        Q=q_along_scaling(c, p, sig),
        g=g_function(c, mass_term, p, sig),
        f=fcurve,
        sigma_star=star,
        sigma_star_degenerate=degenerate,
        sigma_zero=sigma_zero_value,
        notes=notes,
    )
