"""Radial pair representation ``psi(r) = phi(r) + q G^lam(r)`` on a graded mesh.

Used for ground states, which are radial.  The mesh is a composite
Gauss-Legendre rule: geometric panels towards the origin resolve the
``r^2 log^k r`` behaviour of ``phi`` and the log core of ``G``, uniform
panels of width ``h/kappa`` cover the bulk up to ``r_max/kappa``.

``(-Delta + kappa^2)^{-1}`` acts on radial sources through the exact kernel

    u(r) = K0(kr) int_0^r I0(ks) f(s) s ds + I0(kr) int_r^inf K0(ks) f(s) s ds,

with panelwise spectral cumulative integrals, and the derivative is carried
alongside, ``u' = -k K1(kr) A(r) + k I1(kr) B(r)``, so ``||grad phi||^2`` never
needs numerical differentiation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial import legendre as leg
from scipy import special
from scipy.interpolate import CubicSpline

from .hamiltonian import gamma_constant
from .numerics import GridSpec

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class RadialMesh:
    kappa: float
    order: int = 16
    width: float = 0.25
    r_max: float = 40.0
    core: float = 0.05
    depth: int = 48

    @cached_property
    def edges(self) -> np.ndarray:
        k = self.kappa
        core = self.core / k
        geo = [core * 0.5**j for j in range(self.depth, -1, -1)]
        n_bulk = int(math.ceil((self.r_max - self.core) / self.width))
        bulk = np.linspace(core, self.r_max / k, n_bulk + 1)[1:]
        return np.concatenate([[0.0], geo, bulk])

    @cached_property
    def _ref(self):
        x, w = leg.leggauss(self.order)
        v = leg.legvander(x, self.order - 1)
        vinv = np.linalg.inv(v)
        # cumulative integral from -1 to x_i of P_k
        cum = np.empty_like(v)
        for k in range(self.order):
            c = np.zeros(self.order)
            c[k] = 1.0
            cum[:, k] = leg.legval(x, leg.legint(c, lbnd=-1))
        return x, w, cum @ vinv, vinv

    @cached_property
    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        x, w, _, _ = self._ref
        a, b = self.edges[:-1, None], self.edges[1:, None]
        r = 0.5 * (b - a) * x[None, :] + 0.5 * (b + a)
        wr = 0.5 * (b - a) * w[None, :]
        return r, wr

    @property
    def r(self) -> np.ndarray:
        return self.nodes[0]

    @property
    def w(self) -> np.ndarray:
        return self.nodes[1]

    def integrate(self, f: np.ndarray) -> float:
        """``int_0^inf f(r) dr`` for node values ``f``."""
        return float(np.sum(self.w * f))

    def cumulative(self, f: np.ndarray) -> np.ndarray:
        """``int_0^{r_i} f`` at every node."""
        _, _, cmat, _ = self._ref
        half = 0.5 * (self.edges[1:] - self.edges[:-1])[:, None]
        local = (f @ cmat.T) * half
        totals = np.sum(self.w * f, axis=1)
        before = np.concatenate([[0.0], np.cumsum(totals)[:-1]])
        return local + before[:, None]

    def cumulative_tail(self, f: np.ndarray) -> np.ndarray:
        """``int_{r_i}^inf f`` at every node, summed from the far end."""
        _, _, cmat, _ = self._ref
        half = 0.5 * (self.edges[1:] - self.edges[:-1])[:, None]
        totals = np.sum(self.w * f, axis=1)
        local = totals[:, None] - (f @ cmat.T) * half
        after = np.concatenate([np.cumsum(totals[::-1])[::-1][1:], [0.0]])
        return local + after[:, None]

    def evaluate(self, f: np.ndarray, r: np.ndarray) -> np.ndarray:
        """Panelwise polynomial interpolant of node values at radii ``r``."""
        _, _, _, vinv = self._ref
        coef = f @ vinv.T  # Legendre coefficients per panel
        r = np.asarray(r, dtype=float)
        flat = r.ravel()
        idx = np.clip(np.searchsorted(self.edges, flat, side="right") - 1, 0, len(self.edges) - 2)
        a, b = self.edges[idx], self.edges[idx + 1]
        t = (2.0 * flat - a - b) / (b - a)
        out = leg.legval(t, coef[idx].T, tensor=False)
        out = np.where(flat > self.edges[-1], 0.0, out)
        return out.reshape(r.shape)


@dataclass
class RadialState:
    """Real radial pair ``(phi, phi', q)`` at ``lam = kappa^2`` on a mesh."""

    mesh: RadialMesh
    phi: np.ndarray
    dphi: np.ndarray
    q: float

    @property
    def lam(self) -> float:
        return self.mesh.kappa**2

    def __add__(self, other):
        return RadialState(self.mesh, self.phi + other.phi, self.dphi + other.dphi, self.q + other.q)

    def __mul__(self, c: float):
        return RadialState(self.mesh, c * self.phi, c * self.dphi, c * self.q)

    __rmul__ = __mul__


class RadialOps:
    """Green operators and functionals on one mesh."""

    def __init__(self, mesh: RadialMesh):
        self.mesh = mesh
        k = mesh.kappa
        x = k * mesh.r
        self.k0 = special.k0(x)
        self.k1 = special.k1(x)
        self.i0 = special.i0(x)
        self.i1 = special.i1(x)
        self.green = self.k0 / TWO_PI
        self.dgreen = -k * self.k1 / TWO_PI

    def _bessel(self, k: float):
        if k == self.mesh.kappa:
            return self.i0, self.i1, self.k0, self.k1
        x = k * self.mesh.r
        if x.max() > 700.0:
            raise ValueError("shift too large for this mesh (I0 overflows)")
        return special.i0(x), special.i1(x), special.k0(x), special.k1(x)

    def solve(self, f: np.ndarray, kappa: float | None = None):
        """``u = (-Delta + kappa^2)^{-1} f``; returns ``(u, u', u(0))``.

        ``kappa`` defaults to the mesh's own.
        """
        m = self.mesh
        k = m.kappa if kappa is None else kappa
        i0, i1, k0, k1 = self._bessel(k)
        s = m.r
        a = m.cumulative(i0 * f * s)
        b = m.cumulative_tail(k0 * f * s)
        u = k0 * a + i0 * b
        du = -k * k1 * a + k * i1 * b
        u0 = m.integrate(k0 * f * s)
        return u, du, u0

    # quadrature of 2D radial integrals: int g(|x|) dx = 2 pi int g r dr
    def area(self, f: np.ndarray) -> float:
        return TWO_PI * self.mesh.integrate(f * self.mesh.r)

    def psi(self, s: RadialState) -> np.ndarray:
        return s.phi + s.q * self.green

    def green_pair(self, s: RadialState) -> float:
        """``<G^lam, phi>``."""
        return self.area(self.green * s.phi)

    def mass(self, s: RadialState) -> float:
        lam = s.lam
        return self.area(s.phi**2) + 2.0 * s.q * self.green_pair(s) + s.q**2 / (4.0 * math.pi * lam)

    def form_a(self, s: RadialState, alpha: float) -> float:
        """``||grad phi||^2 + lam ||phi||^2 + Gamma |q|^2``."""
        return self.area(s.dphi**2 + s.lam * s.phi**2) + gamma_constant(alpha, s.lam) * s.q**2

    def quadratic_form(self, s: RadialState, alpha: float) -> float:
        return self.form_a(s, alpha) - s.lam * self.mass(s)

    def lp(self, s: RadialState, p: float) -> float:
        return self.area(np.abs(self.psi(s)) ** (p + 1))

    def variance(self, s: RadialState) -> float:
        return self.area(self.mesh.r**2 * self.psi(s) ** 2)

    def h1(self, s: RadialState) -> float:
        return self.area(s.dphi**2 + s.phi**2)

    def value_at_origin(self, s: RadialState) -> float:
        return float(self.mesh.evaluate(s.phi, np.array([0.0]))[0])

    def shifted(self, s: RadialState, mu: float):
        """Regular part at ``mu`` (values and derivative)."""
        km = math.sqrt(mu)
        x = km * self.mesh.r
        g_mu = special.k0(x) / TWO_PI
        dg_mu = -km * special.k1(x) / TWO_PI
        return s.phi + s.q * (self.green - g_mu), s.dphi + s.q * (self.dgreen - dg_mu), g_mu

    def to_grid(self, s: RadialState, grid: GridSpec, refine: int = 8):
        """Spectral samples of ``phi`` on the lattice (truncated Fourier series).

        ``phi_hat(k) = int_0^inf J0(|k| r) phi(r) r dr`` is tabulated on a 1D
        ``|k|`` grid of spacing ``dk/refine`` on a mesh fine enough for the
        oscillation of ``J0`` and spline-interpolated to the lattice.  In
        the pair coordinates at ``lam`` this is the energy-orthogonal
        projection onto the grid space, charge kept.
        """
        m = self.mesh
        k_top = math.sqrt(2.0) * grid.k_max * 1.01
        width = min(m.width, 3.0 * m.kappa / k_top)
        fine = RadialMesh(m.kappa, order=m.order, width=width, r_max=min(m.r_max, 30.0), core=m.core, depth=m.depth)
        rr = fine.r.ravel()
        f = (m.evaluate(s.phi, fine.r) * fine.r * fine.w).ravel()
        kg = np.arange(0.0, k_top + grid.dk / refine, grid.dk / refine)
        vals = np.concatenate([special.j0(np.outer(kg[i : i + 256], rr)) @ f for i in range(0, kg.size, 256)])
        out = CubicSpline(kg, vals)(np.sqrt(grid.k2))
        return out.astype(complex)

    def sample(self, s: RadialState, grid: GridSpec) -> np.ndarray:
        """Point samples of ``phi`` on the grid."""
        return self.mesh.evaluate(s.phi, grid.r)
