"""Action ground states on the Nehari manifold (attractive case).

Ground states are real, positive and radial, so they are computed on the
radial mesh of ``radial.py`` where the log core is resolved to near machine
precision, then sampled onto the requested grid.  The iteration is a
preconditioned normalised gradient flow: with the state stored at
``lam = omega`` the operator ``H + omega`` is diagonal in the pair
coordinates, so one preconditioned step towards
``(H + omega)^{-1} |psi|^{p-1} psi`` is followed by the Nehari rescaling.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import functionals as fn
from .hamiltonian import (
    ModelParams,
    SingularState,
    apply_resolvent,
    bound_state_energy,
    change_lambda,
    form_apply,
    gamma_constant,
    gram_apply,
    pair_dot,
    reconstruct,
    solve_shifted,
)
from .numerics import GridSpec, fft
from .radial import RadialMesh, RadialOps, RadialState

log = logging.getLogger(__name__)

POSITIVITY_ASSUMPTION = (
    "ground states are taken real, positive and radial (imposed, not detected); "
    "symmetry breaking cannot be observed by this solver"
)


class ConvergenceError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


@dataclass
class SolverOptions:
    tol: float = 1e-6
    max_iter: int = 500
    seed: int = 0
    step: float = 1.0
    min_step: float = 1e-6
    monotone_slack: float = 1e-12
    init_width: float | None = None
    radial_order: int = 16
    radial_width: float = 0.25


@dataclass
class Classification:
    energy: float
    energy_sign: int
    s2: float
    s2_sign: int
    charge_term: float
    energy_threshold: float
    concavity_threshold: float
    energy_ratio: float
    concavity_ratio: float
    energy_positive: bool
    concave_at_one: bool
    implication_ok: bool

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GroundStateResult:
    state: SingularState
    profile: RadialState
    params: ModelParams
    d_omega: float
    residual: float
    report: fn.FunctionalReport
    iterations: int
    classification: Classification | None = None
    grid_report: fn.FunctionalReport | None = None
    assumptions: list[str] = field(default_factory=lambda: [POSITIVITY_ASSUMPTION])

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "grid": self.state.grid.to_dict(),
            "lam": self.state.lam,
            "q": [self.state.q.real, self.state.q.imag],
            "dOmega": self.d_omega,
            "residual": self.residual,
            "iterations": self.iterations,
            "report": self.report.to_dict(),
            "gridReport": None if self.grid_report is None else self.grid_report.to_dict(),
            "classification": None if self.classification is None else self.classification.to_dict(),
            "assumptions": self.assumptions,
        }


def preconditioner_shift(alpha: float) -> float:
    return max(1.0, 2.0 * abs(bound_state_energy(alpha)))


# --- residuals ---------------------------------------------------------------


def _grid_residual(s: SingularState, params: ModelParams, shift: float) -> float:
    grid, lam, alpha = s.grid, s.lam, params.alpha
    a_top, a_q = form_apply(s, alpha)
    m_top, m_q = gram_apply(s)
    d = params.omega - lam
    top = a_top + d * m_top
    bot = a_q + d * m_q
    if params.g != 0:
        w_top, w_q = fn.power_weak(s, params.p)
        top = top + params.g * w_top
        bot = bot + params.g * w_q
    r_phi, r_q = solve_shifted((top, bot), shift, lam, alpha, grid)
    num = pair_dot(SingularState(r_phi, r_q, lam, grid), (top, bot)).real
    ds = shift - lam
    den = pair_dot(s, (a_top + ds * m_top, a_q + ds * m_q)).real
    if den <= 0:
        return math.inf
    return math.sqrt(max(num, 0.0) / den)


def _radial_residual(s: RadialState, params: ModelParams, shift: float, ops: RadialOps | None = None) -> float:
    ops = ops or RadialOps(s.mesh)
    mu, omega, alpha = shift, params.omega, params.alpha
    psi = ops.psi(s)
    h = (mu - omega) * psi
    if params.g != 0:
        h = h - params.g * np.abs(psi) ** (params.p - 1) * psi
    # regular parts at mu of psi and of (H + mu)^{-1} h
    phi_mu, dphi_mu, g_mu = ops.shifted(s, mu)
    u, du, _ = ops.solve(h, kappa=math.sqrt(mu))
    gam = gamma_constant(alpha, mu)
    q_h = ops.area(g_mu * h) / gam
    r_phi, r_dphi, r_q = phi_mu - u, dphi_mu - du, s.q - q_h
    num = ops.area(r_dphi**2 + mu * r_phi**2) + gam * r_q**2
    den = ops.area(dphi_mu**2 + mu * phi_mu**2) + gam * s.q**2
    if den <= 0:
        return math.inf
    return math.sqrt(max(num, 0.0) / den)


def stationary_residual(state, params: ModelParams, shift: float | None = None) -> float:
    """Preconditioned defect of ``(H + omega) psi + g |psi|^{p-1} psi = 0``.

    The defect is mapped through ``(H + shift)^{-1}`` (default
    ``shift = max(1, 2|E_alpha|)``) and measured in the energy norm at
    ``shift``, i.e. its dual norm, relative to the energy norm of the state.
    Accepts grid states and radial profiles.
    """
    if shift is None:
        shift = preconditioner_shift(params.alpha)
    if isinstance(state, RadialState):
        return _radial_residual(state, params, shift)
    return _grid_residual(state, params, shift)


# --- radial solver -----------------------------------------------------------


def radial_report(s: RadialState, params: ModelParams, ops: RadialOps | None = None) -> fn.FunctionalReport:
    ops = ops or RadialOps(s.mesh)
    p, g = params.p, params.g
    m = ops.mass(s)
    form = ops.quadratic_form(s, params.alpha)
    lp = ops.lp(s, p)
    en = 0.5 * form + g / (p + 1) * lp
    cs = s.q**2
    return fn.FunctionalReport(
        mass=m,
        form=form,
        energy=en,
        action=en + 0.5 * params.omega * m,
        nehari=form + params.omega * m - lp,
        qvir=form + g * (p - 1) / (p + 1) * lp + cs / fn.FOUR_PI,
        variance=ops.variance(s),
        varianceRate=0.0,
        lpNorm=lp,
        chargeSq=cs,
        dHalfNorm=math.sqrt(ops.h1(s) + cs),
        lam=s.lam,
    )


def _radial_nehari_scale(s: RadialState, params: ModelParams, ops: RadialOps) -> float:
    quad = ops.form_a(s, params.alpha)  # F + omega ||psi||^2 at lam = omega
    lp = ops.lp(s, params.p)
    if quad <= 0 or lp <= 0:
        raise ValueError("Nehari rescaling needs F + omega ||psi||^2 > 0")
    return (quad / lp) ** (1.0 / (params.p - 1))


def radial_initial_guess(params: ModelParams, mesh: RadialMesh, opts: SolverOptions, ops: RadialOps) -> RadialState:
    """``G^omega`` times a Gaussian envelope, Nehari-normalised.

    The envelope width is jittered by ``opts.seed`` so that distinct seeds
    start from distinct data.
    """
    rng = np.random.default_rng(opts.seed)
    width = opts.init_width or (2.0 / mesh.kappa) * (1.0 + 0.25 * rng.uniform(-1.0, 1.0))
    r = mesh.r
    env = np.exp(-0.5 * (r / width) ** 2)
    denv = -(r / width**2) * env
    # psi = G env  ->  phi = G (env - 1), charge 1
    phi = ops.green * (env - 1.0)
    dphi = ops.dgreen * (env - 1.0) + ops.green * denv
    s = RadialState(mesh, phi, dphi, 1.0)
    return s * _radial_nehari_scale(s, params, ops)


def radial_mesh_for(params: ModelParams, opts: SolverOptions) -> RadialMesh:
    return RadialMesh(math.sqrt(params.omega), order=opts.radial_order, width=opts.radial_width)


def solve_radial(params: ModelParams, opts: SolverOptions | None = None, initial: RadialState | None = None):
    """Radial ground state; returns ``(profile, residual, iterations)``."""
    opts = opts or SolverOptions()
    if params.g != -1:
        raise ValueError("ground states are computed for the attractive case g = -1")
    if not params.p > 1:
        raise ValueError("p must exceed 1")
    e_alpha = bound_state_energy(params.alpha)
    if not params.omega > -e_alpha:
        raise ValueError(f"omega must exceed -E_alpha = {-e_alpha:.6g}")
    mesh = initial.mesh if initial is not None else radial_mesh_for(params, opts)
    ops = RadialOps(mesh)
    s = initial if initial is not None else radial_initial_guess(params, mesh, opts, ops)
    p = params.p
    gam = gamma_constant(params.alpha, params.omega)
    coef = (p - 1) / (2 * (p + 1))  # on the Nehari manifold S = coef * lp

    def target(st):
        psi = ops.psi(st)
        f = np.abs(psi) ** (p - 1) * psi
        u, du, _ = ops.solve(f)
        return RadialState(mesh, u, du, ops.area(ops.green * f) / gam)

    s = s * _radial_nehari_scale(s, params, ops)
    val = coef * ops.lp(s, p)
    shift = preconditioner_shift(params.alpha)
    residual = _radial_residual(s, params, shift, ops)
    tau = opts.step
    it = 0
    while residual > opts.tol and it < opts.max_iter:
        it += 1
        t = target(s)
        while True:
            trial = s * (1.0 - tau) + t * tau
            trial = trial * _radial_nehari_scale(trial, params, ops)
            new_val = coef * ops.lp(trial, p)
            if new_val <= val * (1.0 + opts.monotone_slack) or tau <= opts.min_step:
                break
            tau *= 0.5
        if new_val > val * (1.0 + opts.monotone_slack):
            raise ConvergenceError(
                f"action increased along the flow at iteration {it}: {val!r} -> {new_val!r}", residual
            )
        s, val = trial, new_val
        tau = min(opts.step, 2.0 * tau)
        residual = _radial_residual(s, params, shift, ops)
        log.debug("iter %d residual %.3e action %.15g", it, residual, val)
    if residual > opts.tol:
        raise ConvergenceError(f"no convergence after {it} iterations (residual {residual:.3e})", residual)
    return s, residual, it


def solve_ground_state(
    params: ModelParams,
    grid: GridSpec,
    opts: SolverOptions | None = None,
    initial: RadialState | None = None,
) -> GroundStateResult:
    """Ground state ``phi_omega`` and its diagnostics.

    The returned ``state`` is the profile sampled on ``grid`` at
    ``lam = omega``; ``report`` holds the functionals of the radial profile
    and ``grid_report`` those of the sampled grid state.
    """
    opts = opts or SolverOptions()
    prof, residual, it = solve_radial(params, opts, initial)
    ops = RadialOps(prof.mesh)
    rep = radial_report(prof, params, ops)
    state = to_grid_state(prof, grid, ops)
    res = GroundStateResult(
        state=state,
        profile=prof,
        params=params,
        d_omega=rep.action,
        residual=residual,
        report=rep,
        iterations=it,
    )
    res.grid_report = fn.report(state, params)
    res.classification = classify_stability(res)
    return res


def to_grid_state(prof: RadialState, grid: GridSpec, ops: RadialOps | None = None) -> SingularState:
    ops = ops or RadialOps(prof.mesh)
    return SingularState(ops.to_grid(prof, grid), complex(prof.q), prof.lam, grid)


def _grid_nonlinear_load(x: SingularState, params: ModelParams) -> tuple[np.ndarray, complex]:
    """``M (n, 0)`` with ``n = fft |psi|^{p-1} psi`` of the grid field, charge untouched."""
    psi = reconstruct(x)
    n_hat = fft(np.abs(psi) ** (params.p - 1) * psi, x.grid)
    return gram_apply(SingularState(n_hat, 0j, x.lam, x.grid))


def refine_on_grid(
    state: SingularState, params: ModelParams, tol: float = 1e-11, max_iter: int = 200
) -> tuple[SingularState, float, int]:
    """Standing wave of the split-step scheme itself.

    The time stepper rotates the grid field pointwise with the charge held
    fixed, so its standing waves solve ``A x = -g M (n, 0)`` at
    ``lam = omega`` rather than the continuum equation.  Petviashvili
    iteration from a nearby state (the sampled radial profile); returns
    ``(state, relative update, iterations)``.
    """
    if params.g == 0:
        raise ValueError("refinement needs a nonlinearity")
    omega = params.omega
    x = change_lambda(state, omega) if state.lam != omega else state
    grid, alpha = x.grid, params.alpha
    gamma = params.p / (params.p - 1)
    delta = math.inf
    for it in range(1, max_iter + 1):
        load = _grid_nonlinear_load(x, params)
        rhs = (-params.g * load[0], -params.g * load[1])
        y_phi, y_q = solve_shifted(rhs, omega, omega, alpha, grid)
        ax = form_apply(x, alpha)
        num = pair_dot(x, ax).real
        den = pair_dot(x, rhs).real
        if not (num > 0 and den > 0):
            raise ConvergenceError("refinement left the positive cone", delta)
        y = SingularState(y_phi, y_q, omega, grid) * (num / den) ** gamma
        diff = y - x
        delta = math.sqrt(fn.mass(diff) / fn.mass(y))
        x = y
        if delta <= tol:
            return x, delta, it
    raise ConvergenceError(f"grid refinement stalled at {delta:.3e}", delta)


def is_radially_nonincreasing(prof: RadialState, rel_tol: float = 1e-6, ops: RadialOps | None = None) -> bool:
    """Positivity and monotonicity of ``psi`` along the radial nodes."""
    ops = ops or RadialOps(prof.mesh)
    psi = ops.psi(prof).ravel()
    peak = np.abs(psi).max()
    if np.any(psi < -rel_tol * peak):
        return False
    return bool(np.all(np.diff(psi) <= rel_tol * peak))


# --- checks ------------------------------------------------------------------


def nehari_scale(s: SingularState, params: ModelParams) -> float:
    """The ``c > 0`` with ``N_omega(c psi) = 0`` for a grid state."""
    quad = fn.quadratic_form(s, params.alpha) + params.omega * fn.mass(s)
    lp = fn.lp_norm(s, params.p)
    if quad <= 0 or lp <= 0:
        raise ValueError("Nehari rescaling needs F + omega ||psi||^2 > 0")
    return (quad / lp) ** (1.0 / (params.p - 1))


def pohozaev_defect(rep: fn.FunctionalReport, params: ModelParams) -> float:
    """``|omega ||phi||^2 - |q|^2/(4pi) - 2/(p+1) ||phi||_{p+1}^{p+1}| / (1 + |lhs|)``."""
    lhs = params.omega * rep.mass
    rhs = rep.chargeSq / fn.FOUR_PI + 2.0 / (params.p + 1) * rep.lpNorm
    return abs(lhs - rhs) / (1.0 + abs(lhs))


def pohozaev_from_constraints(rep: fn.FunctionalReport, params: ModelParams) -> float:
    """Same defect assembled as ``N_omega - Q`` (valid for g = -1)."""
    return abs(rep.nehari - rep.qvir) / (1.0 + abs(params.omega * rep.mass))


def classify_stability(result: GroundStateResult) -> Classification:
    """Sign of ``E(phi_omega)`` and of ``S''(1)`` with both threshold forms."""
    rep, p = result.report, result.params.p
    a = rep.form + rep.chargeSq / fn.FOUR_PI
    b = rep.chargeSq / (2 * math.pi)
    s2 = a * (3 - p) + b
    e_thr = 2 * (p - 3) / (p + 1) * rep.lpNorm
    c_thr = (p - 3) * (p - 1) / (p + 1) * rep.lpNorm
    implication = not (p > 3 and rep.energy > 0) or s2 < 0
    return Classification(
        energy=rep.energy,
        energy_sign=int(np.sign(rep.energy)),
        s2=s2,
        s2_sign=int(np.sign(s2)),
        charge_term=b,
        energy_threshold=e_thr,
        concavity_threshold=c_thr,
        energy_ratio=b / e_thr if e_thr else math.inf,
        concavity_ratio=b / c_thr if c_thr else math.inf,
        energy_positive=bool(p > 3 and rep.energy > 0),
        concave_at_one=bool(p > 3 and s2 <= 0),
        implication_ok=bool(implication),
    )


def eigenpair_validate(alpha: float, grid: GridSpec, tol: float = 1e-10, max_iter: int = 200, seed: int = 0):
    """Inverse-power iteration with the Krein resolvent.

    The shift sits just above ``-E_alpha`` so that ``(H + shift)^{-1}`` is
    dominated by the bound state.  Returns ``(rayleigh_quotient, state)``
    with the phase fixed so that ``q > 0``.
    """
    e_alpha = bound_state_energy(alpha)
    lam = preconditioner_shift(alpha)
    shift = -1.05 * e_alpha
    rng = np.random.default_rng(seed)
    width = 1.0 / math.sqrt(abs(e_alpha))
    psi = np.exp(-grid.r2 / (2 * width**2)) * (1 + 0.1 * rng.standard_normal(grid.r2.shape))
    s = SingularState(fft(psi.astype(complex), grid), 0j, lam, grid)
    s = s * (1.0 / math.sqrt(fn.mass(s)))
    prev = math.inf
    rq = math.nan
    for _ in range(max_iter):
        s = apply_resolvent(shift, s, alpha, lam=lam)
        s = s * (1.0 / math.sqrt(fn.mass(s)))
        rq = fn.quadratic_form(s, alpha)
        if abs(rq - prev) <= tol * abs(rq):
            break
        prev = rq
    else:
        raise ConvergenceError(f"inverse iteration stagnated (last change {abs(rq - prev):.2e})")
    if s.q != 0:
        s = s * (abs(s.q) / s.q)
    return rq, s
