"""Quadrature of ``int |phi + q G^lam|^{p+1}`` for states with a log singularity.

A smooth partition of unity ``1 = chi + (1 - chi)`` splits the integral:

* far part: trapezoid sum on the grid of ``(1 - chi) |phi_i + q G(x_i)|^{p+1}``
  with exact samples of ``G^lam``; ``chi = 1`` at the origin so it never
  samples the singularity;
* near part: polar product rule on the disk ``r < R`` (log-graded radial
  panels, trapezoid in angle) with ``phi`` at the nodes obtained by local
  tensor Lagrange interpolation of the grid samples.

Everything is linear in ``(phi_i, q)`` up to the pointwise power, so the
gradient with respect to the grid values is the adjoint of the same maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse, special

from .numerics import GridSpec

RADIUS_CELLS = 14.0
STENCIL = 10


def cutoff(r: np.ndarray, radius: float) -> np.ndarray:
    """C-infinity step: 1 for ``r <= radius/4``, 0 for ``r >= radius``."""
    a = 0.25 * radius
    t = np.clip((np.asarray(r, dtype=float) - a) / (radius - a), 0.0, 1.0)

    def h(s):
        out = np.zeros_like(s)
        m = s > 0
        out[m] = np.exp(-1.0 / s[m])
        return out

    u, v = h(1.0 - t), h(t)
    return u / (u + v)


def _lagrange_weights(y: np.ndarray, grid: GridSpec, m: int):
    """Indices and weights of the ``m``-point equispaced Lagrange stencil."""
    n, dx = grid.n, grid.dx
    s = y / dx + n // 2
    i0 = np.floor(s).astype(int) - m // 2 + 1
    idx = i0[:, None] + np.arange(m)[None, :]
    t = s[:, None] - idx  # distance in cells to each stencil point
    w = np.ones_like(t)
    for j in range(m):
        for k in range(m):
            if k != j:
                w[:, j] *= (t[:, k]) / (k - j)
    # w_j = prod_{k != j} (s - i_k)/(i_j - i_k); (i_j - i_k) = j - k
    w *= (-1.0) ** (m - 1)
    return idx, w


def _radial_panels(radius: float, dx: float):
    """Radial panels: geometric towards the origin, width dx/2 beyond dx/2."""
    inner = min(0.5 * dx, radius)
    edges = [0.0] + [inner * 0.5**j for j in range(32, -1, -1)]
    r = inner
    while r < radius * (1 - 1e-12):
        edges.append(min(radius, r + 0.5 * dx))
        r = edges[-1]
    return edges


def _polar_nodes(radius: float, dx: float, order: int = 10):
    """Product rule on the disk; angular count grows with the radius."""
    xg, wg = np.polynomial.legendre.leggauss(order)
    edges = _radial_panels(radius, dx)
    xs, ys, ws = [], [], []
    for a, b in zip(edges[:-1], edges[1:]):
        rn = 0.5 * (b - a) * xg + 0.5 * (b + a)
        rw = 0.5 * (b - a) * wg
        n_theta = 8 + 2 * int(math.ceil(math.pi * b / dx))
        th = 2.0 * math.pi * (np.arange(n_theta) + 0.5) / n_theta
        R, T = np.meshgrid(rn, th, indexing="ij")
        xs.append((R * np.cos(T)).ravel())
        ys.append((R * np.sin(T)).ravel())
        ws.append(np.repeat(rw * rn * (2.0 * math.pi / n_theta), n_theta))
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(ws)


@dataclass(frozen=True)
class SingularQuadrature:
    grid: GridSpec
    lam: float
    far_weight: np.ndarray  # (n, n), includes dx^2
    far_green: np.ndarray  # (n, n), exact G samples, 0 at origin
    near_weight: np.ndarray  # (m,), includes chi and polar Jacobian
    near_green: np.ndarray  # (m,)
    interp: sparse.csr_matrix  # (m, n*n)

    def fields(self, phi: np.ndarray, q: complex):
        """Grid and node values of ``psi`` from grid values of ``phi``."""
        far = phi + q * self.far_green
        near = self.interp @ phi.ravel() + q * self.near_green
        return far, near

    def lp(self, phi: np.ndarray, q: complex, p: float) -> float:
        far, near = self.fields(phi, q)
        return float(np.sum(self.far_weight * np.abs(far) ** (p + 1)) + np.sum(self.near_weight * np.abs(near) ** (p + 1)))

    def gradient(self, phi: np.ndarray, q: complex, p: float):
        """``(d/d conj(phi_i), d/d conj(q))`` of ``lp / ((p+1)/2)``.

        Returns ``(W_phi, W_q)`` with ``W_phi`` an ``(n, n)`` array of
        ``sum_nodes weight |psi|^{p-1} psi`` pulled back to the grid values.
        """
        far, near = self.fields(phi, q)
        wf = self.far_weight * np.abs(far) ** (p - 1) * far
        wn = self.near_weight * np.abs(near) ** (p - 1) * near
        g_phi = wf + (self.interp.T @ wn).reshape(phi.shape)
        g_q = complex(np.sum(np.conj(self.far_green) * wf) + np.sum(np.conj(self.near_green) * wn))
        return g_phi, g_q


@lru_cache(maxsize=16)
def singular_quadrature(grid: GridSpec, lam: float, radius_cells: float = RADIUS_CELLS, stencil: int = STENCIL):
    if not lam > 0:
        raise ValueError("lambda must be positive")
    dx = grid.dx
    radius = radius_cells * dx
    if radius > 0.5 * grid.half_extent:
        raise ValueError("grid too coarse for the near-origin quadrature")
    sl = math.sqrt(lam)
    r = grid.r
    chi = cutoff(r, radius)
    far_w = (1.0 - chi) * dx * dx
    far_w[grid.origin_index] = 0.0
    rr = r.copy()
    rr[grid.origin_index] = 1.0
    far_g = special.k0(sl * rr) / (2.0 * math.pi)
    far_g[grid.origin_index] = 0.0

    x, y, w = _polar_nodes(radius, dx)
    rflat = np.hypot(x, y)
    w = w * cutoff(rflat, radius)
    keep = w > 0
    x, y, rflat, w = x[keep], y[keep], rflat[keep], w[keep]
    near_g = special.k0(sl * rflat) / (2.0 * math.pi)

    ix, wx = _lagrange_weights(x, grid, stencil)
    iy, wy = _lagrange_weights(y, grid, stencil)
    m = len(x)
    rows = np.repeat(np.arange(m), stencil * stencil)
    cols = (ix[:, :, None] * grid.n + iy[:, None, :]).reshape(m, -1).ravel()
    vals = (wx[:, :, None] * wy[:, None, :]).reshape(m, -1).ravel()
    interp = sparse.csr_matrix((vals, (rows, cols)), shape=(m, grid.n * grid.n))
    return SingularQuadrature(grid, float(lam), far_w, far_g, w, near_g, interp)
