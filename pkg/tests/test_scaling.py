import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from conftest import random_state
from ptnls import functionals as fn
from ptnls import scaling as sc
from ptnls.groundstate import radial_report, solve_radial, stationary_residual
from ptnls.hamiltonian import ModelParams, bound_state_energy
from ptnls.numerics import GridSpec


def s_oracle(sig, F, q2, lp, p, mass_term):
    """S(psi^sigma) written from the two scaling laws; accepts complex sigma."""
    return 0.5 * sig**2 * F + q2 / (4 * np.pi) * sig**2 * np.log(sig) - sig ** (p - 1) * lp / (p + 1) + mass_term


def cstep(f, x, h=1e-30):
    return (f(x + 1j * h)).imag / h


@pytest.fixture(scope="module")
def ground():
    params = ModelParams(alpha=0.0, p=5.0, g=-1, omega=20.0)
    prof, _, _ = solve_radial(params)
    return params, prof, radial_report(prof, params)


# --- the dilation on grid states --------------------------------------------


@given(st.integers(0, 1000), st.floats(0.7, 2.0))
def test_grid_scaling_identities(seed, sigma):
    g = GridSpec(128, 12.0)
    s = random_state(g, seed, width=1.0)
    t = sc.scale_grid_state(s, sigma)
    assert t.lam == pytest.approx(s.lam * sigma**2)
    assert t.q == pytest.approx(sigma * s.q)
    # exact up to spectral content pushed past the band edge when sigma < 1
    assert fn.mass(t) == pytest.approx(fn.mass(s), rel=1e-6)
    lhs, rhs = sc.scaling_form_identity(s, 0.1, sigma)
    assert lhs == pytest.approx(rhs, rel=1e-4)
    assert fn.lp_norm(t, 3.0) == pytest.approx(sigma**2 * fn.lp_norm(s, 3.0), rel=1e-4)


def test_grid_scaling_range_checks(grid64):
    s = random_state(grid64, 0)
    with pytest.raises(sc.ScaleRangeError):
        sc.scale_grid_state(s, 1e-3)
    with pytest.raises(sc.ScaleRangeError):
        sc.scale_grid_state(s, 50.0)
    with pytest.raises(ValueError):
        sc.apply_scaling(s, -1.0)
    assert sc.apply_scaling(s, 1.0) is s


def test_alpha_shift_moves_the_bound_state():
    for a, sig in ((0.0, 1.3), (0.2, 0.6)):
        assert bound_state_energy(sc.scaled_alpha_shift(a, sig)) == pytest.approx(sig**2 * bound_state_energy(a))


@pytest.mark.parametrize("sigma", [0.8, 1.2, 1.5])
def test_radial_scaling_is_exact(ground, sigma):
    params, prof, rep = ground
    t = radial_report(sc.apply_scaling(prof, sigma), params)
    assert t.mass == pytest.approx(rep.mass, rel=1e-12)
    assert t.chargeSq == pytest.approx(sigma**2 * rep.chargeSq, rel=1e-12)
    assert t.form == pytest.approx(sigma**2 * rep.form + rep.chargeSq / (2 * math.pi) * sigma**2 * math.log(sigma), rel=1e-10)
    assert t.lpNorm == pytest.approx(sigma ** (params.p - 1) * rep.lpNorm, rel=1e-10)


# --- closed forms -------------------------------------------------------------


@given(
    st.floats(-5, 5), st.floats(0, 10), st.floats(0.1, 10), st.floats(2.5, 8), st.floats(0, 5), st.floats(0.3, 3.0)
)
def test_derivative_chain_against_complex_step(F, q2, lp, p, mt, sigma):
    rep = fn.FunctionalReport(0, F, 0, 0, 0, 0, 0, 0, lp, q2, 0, 1)
    c = sc.abc_from_report(rep, p)
    S = lambda x: s_oracle(x, F, q2, lp, p, mt)
    assert sc.action_along_scaling(c, mt, p, sigma) == pytest.approx(S(sigma), rel=1e-12, abs=1e-12)
    d1 = sc.action_along_scaling(c, mt, p, sigma, 1)
    d2 = sc.action_along_scaling(c, mt, p, sigma, 2)
    d3 = sc.action_along_scaling(c, mt, p, sigma, 3)
    assert d1 == pytest.approx(cstep(S, sigma), rel=1e-8, abs=1e-8)
    assert d2 == pytest.approx(cstep(lambda x: sc_d1(c, mt, p, x), sigma), rel=1e-8, abs=1e-8)
    assert d3 == pytest.approx(cstep(lambda x: sc_d2(c, p, x), sigma), rel=1e-8, abs=1e-8)
    assert sc.q_along_scaling(c, p, sigma) == pytest.approx(sigma * d1, rel=1e-10, abs=1e-10)
    assert sc.q_derivative_along_scaling(c, p, sigma) == pytest.approx(d1 + sigma * d2, rel=1e-8, abs=1e-8)


def sc_d1(c, mt, p, x):
    return c.A * x + c.B * x * np.log(x) - c.C * x ** (p - 2)


def sc_d2(c, p, x):
    return (c.A + c.B) + c.B * np.log(x) - c.C * (p - 2) * x ** (p - 3)


def test_closed_forms_match_measured(ground):
    params, prof, rep = ground
    c = sc.abc_from_report(rep, params.p)
    mt = 0.5 * params.omega * rep.mass
    for sigma in (0.5, 0.9, 1.1, 2.0):
        t = radial_report(sc.scale_radial(prof, sigma), params)
        assert sc.action_along_scaling(c, mt, params.p, sigma) == pytest.approx(t.action, rel=1e-9)
        assert sc.q_along_scaling(c, params.p, sigma) == pytest.approx(t.qvir, rel=1e-9, abs=1e-9 * c.A)


def test_a_equals_c_on_ground_states(ground):
    params, _, rep = ground
    c = sc.abc_from_report(rep, params.p)
    assert abs(c.A - c.C) <= 1e-4 * c.A


def test_abc_accepts_states(ground):
    params, prof, rep = ground
    assert sc.abc_constants(prof, params) == sc.abc_from_report(rep, params.p)
    assert sc.abc_constants(rep, params) == sc.abc_from_report(rep, params.p)


def test_g_function_stationary_at_one(ground):
    params, _, rep = ground
    c = sc.abc_from_report(rep, params.p)
    mt = 0.5 * params.omega * rep.mass
    assert abs(sc.g_function(c, mt, params.p, 1.0, 1)) <= 1e-4 * c.A
    assert sc.g_function(c, mt, params.p, 1.0, 2) < 0


# --- sigma* -------------------------------------------------------------------


@given(st.floats(0.01, 100), st.floats(0.01, 0.99), st.floats(3.2, 10))
def test_sigma_star_root(A, frac, p):
    B = frac * A * (p - 3)
    res = sc.sigma_star_root(A, B, p)
    assert 0 < res.value < 1
    assume(res.value > 1e-6)
    gprime = res.value * (B * math.log(res.value) - A * (res.value ** (p - 3) - 1))
    assert abs(gprime) <= 1e-10
    # g has its minimum there: h changes sign from - to +
    h = lambda s: B * math.log(s) - A * (s ** (p - 3) - 1)
    assert h(res.value * (1 - 1e-6)) < 0 < h(min(res.value * (1 + 1e-6), 0.5 * (1 + res.value)))


def test_sigma_star_special_cases():
    assert sc.sigma_star_root(1.0, 0.0, 5.0).degenerate
    assert sc.sigma_star_root(1.0, 0.0, 5.0).value == 1.0
    with pytest.raises(sc.NoRootError):
        sc.sigma_star_root(1.0, 2.5, 5.0)
    with pytest.raises(ValueError):
        sc.sigma_star_root(1.0, 1.0, 3.0)
    with pytest.raises(ValueError):
        sc.sigma_star_root(-1.0, 1.0, 5.0)


def test_sigma_star_example_value():
    res = sc.sigma_star_root(1.0, 1.0, 5.0)
    assert math.log(res.value) == pytest.approx(res.value**2 - 1, abs=1e-14)


# --- f ------------------------------------------------------------------------


@pytest.mark.parametrize("p", [3.5, 4.0, 5.0, 6.0, 8.0])
def test_f_vanishes_at_one_and_decreases(p):
    assert sc.f_function(p, 1.0) == 0.0
    cert = sc.certify_f_decreasing(p, points=10_000)
    assert cert.decreasing and cert.min_neg_derivative > 0


@given(st.floats(3.1, 9.0), st.floats(0.05, 0.99))
def test_f_derivative_against_complex_step(p, s):
    assert sc.f_derivative(p, s) == pytest.approx(cstep(lambda x: sc.f_function_complex(p, x), s), rel=1e-9, abs=1e-9)


# --- omega rescaling ---------------------------------------------------------


def test_omega_rescale_gives_unit_frequency_ground_state(ground):
    params, prof, rep = ground
    hat, new = sc.omega_rescale(prof, params)
    assert new.omega == 1.0
    assert new.alpha == pytest.approx(math.log(params.omega) / (4 * math.pi))
    assert stationary_residual(hat, new) <= 1e-3


def test_omega_rescale_on_grid_state():
    params = ModelParams(alpha=0.0, p=3.0, g=-1, omega=4.0)
    from ptnls.groundstate import solve_ground_state

    gs = solve_ground_state(params, GridSpec(128, 6.0))
    hat, new = sc.omega_rescale(gs.state, params)
    assert stationary_residual(hat, new) <= 2e-2
    # the lattice sum for the Green's mass is coarser at the reduced lam
    assert fn.mass(hat) == pytest.approx(params.omega ** (1 - 2 / (params.p - 1)) * fn.mass(gs.state), rel=1e-4)


# --- sampled analysis -----------------------------------------------------------


def test_sigma_analysis_table(ground):
    params, _, rep = ground
    c = sc.abc_from_report(rep, params.p)
    sa = sc.sigma_analysis(c, 0.5 * params.omega * rep.mass, params.p, sigma_zero_value=1.0)
    assert sa.sigma_grid.size == 801
    assert sa.sigma_grid[0] == 0.25 and sa.sigma_grid[-1] == 4.0
    rows = list(sa.csv_rows())
    assert rows[0] == ["sigma", "S", "dS", "d2S", "Q", "g", "f"] and len(rows) == 802
    d = sa.to_dict()
    assert 0 < d["sigmaStar"] < 1
    i = int(np.argmin(abs(sa.sigma_grid - 1.0)))
    assert sa.S[i] == pytest.approx(rep.action, rel=1e-9)
    assert sa.S.max() == pytest.approx(rep.action, rel=1e-6)


def test_sigma_zero():
    assert sc.sigma_zero(2.0, 2.0 * 3.0**4, 5.0) == pytest.approx(3.0)
    with pytest.raises(ZeroDivisionError):
        sc.sigma_zero(0.0, 1.0, 5.0)
