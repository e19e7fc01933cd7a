import math

import numpy as np
import pytest
from scipy import special

from ptnls.hamiltonian import gamma_constant
from ptnls.numerics import GridSpec, fft
from ptnls.radial import RadialMesh, RadialOps, RadialState


@pytest.fixture(scope="module")
def ops():
    return RadialOps(RadialMesh(1.5))


def test_mesh_integrates_polynomials_and_gaussians(ops):
    m = ops.mesh
    assert m.integrate(np.exp(-m.r**2) * m.r) == pytest.approx(0.5, rel=1e-13)
    # log-singular integrand near the origin
    assert m.integrate(np.log(m.r) * m.r) == pytest.approx(
        0.5 * (m.edges[-1] ** 2 * math.log(m.edges[-1]) - m.edges[-1] ** 2 / 2), rel=1e-12
    )


def test_cumulative_and_tail_sum_to_total(ops):
    m = ops.mesh
    f = np.exp(-m.r) * m.r
    assert np.allclose(m.cumulative(f) + m.cumulative_tail(f), m.integrate(f), rtol=1e-13)
    exact = 1 - np.exp(-m.r) * (1 + m.r)
    assert np.allclose(m.cumulative(f), exact, atol=1e-13)


def test_green_solve_reproduces_gaussian(ops):
    # (-Lap + k^2) e^{-r^2} = (4 - 4 r^2 + k^2) e^{-r^2}
    k = ops.mesh.kappa
    r = ops.mesh.r
    f = (4 - 4 * r**2 + k * k) * np.exp(-(r**2))
    u, du, u0 = ops.solve(f)
    assert np.max(abs(u - np.exp(-(r**2)))) < 1e-10
    assert np.max(abs(du + 2 * r * np.exp(-(r**2)))) < 1e-10
    assert u0 == pytest.approx(1.0, rel=1e-11)


def test_solve_other_shift(ops):
    kk = 0.7
    r = ops.mesh.r
    f = (4 - 4 * r**2 + kk * kk) * np.exp(-(r**2))
    u, _, _ = ops.solve(f, kappa=kk)
    assert np.max(abs(u - np.exp(-(r**2)))) < 1e-10


def test_green_mass_and_form(ops):
    lam = ops.mesh.kappa ** 2
    s = RadialState(ops.mesh, np.zeros_like(ops.mesh.r), np.zeros_like(ops.mesh.r), 1.0)
    assert ops.mass(s) == pytest.approx(1 / (4 * math.pi * lam), rel=1e-14)
    assert ops.form_a(s, 0.2) == pytest.approx(gamma_constant(0.2, lam))


def test_shifted_regular_part_is_consistent(ops):
    # psi is the same whichever lambda decomposes it
    r = ops.mesh.r
    s = RadialState(ops.mesh, np.exp(-(r**2)), -2 * r * np.exp(-(r**2)), 0.7)
    phi_mu, _, g_mu = ops.shifted(s, 4.0)
    assert np.allclose(phi_mu + s.q * g_mu, ops.psi(s), atol=1e-13)


def test_to_grid_matches_fft_of_samples():
    mesh = RadialMesh(1.0)
    ops = RadialOps(mesh)
    r = mesh.r
    s = RadialState(mesh, np.exp(-(r**2) / 2), -r * np.exp(-(r**2) / 2), 0.0)
    grid = GridSpec(128, 10.0)
    hat = ops.to_grid(s, grid)
    assert np.max(abs(hat - np.exp(-grid.k2 / 2))) < 1e-8
    direct = fft(ops.sample(s, grid).astype(complex), grid)
    assert np.max(abs(hat - direct)) < 1e-8


def test_evaluate_outside_mesh_is_zero(ops):
    vals = ops.mesh.evaluate(np.ones_like(ops.mesh.r), np.array([0.0, 1.0, 1e6]))
    assert vals[0] == pytest.approx(1.0) and vals[2] == 0.0


def test_bessel_overflow_guard(ops):
    with pytest.raises(ValueError):
        ops.solve(np.ones_like(ops.mesh.r), kappa=1e3)
