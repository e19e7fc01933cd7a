"""Experiment drivers: membership tests, blow-up runs, instability scans, sweeps."""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import functionals as fn
from .evolution import (
    BlowupOptions,
    BlowupVerdict,
    EvolutionTrace,
    EvolveOptions,
    concavity_bound,
    detect_blowup,
    evolve,
    virial_check,
)
from .groundstate import (
    ConvergenceError,
    GroundStateResult,
    SolverOptions,
    eigenpair_validate,
    radial_report,
    refine_on_grid,
    solve_ground_state,
    solve_radial,
    to_grid_state,
)
from .hamiltonian import (
    ModelParams,
    SingularState,
    apply_resolvent,
    bound_state_energy,
    change_lambda,
    reconstruct,
    remove_cutoff_mode,
)
from .io import JsonlAppender
from .numerics import POSITION, ComplexField, GridSpec
from .radial import RadialOps, RadialState
from .scaling import abc_from_report, scale_radial, sigma_analysis, sigma_zero

log = logging.getLogger(__name__)

BAND = 1e-8  # relative tolerance band on the membership inequalities
CI_OMEGAS = (2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 1e3, 1e4)


class MembershipError(RuntimeError):
    """A run's membership precondition failed; ``report`` says which row."""

    def __init__(self, report: "MembershipReport"):
        super().__init__(f"{report.set_name} membership failed: {report.failed_rows()}")
        self.report = report


# --- membership --------------------------------------------------------------


@dataclass(frozen=True)
class Hypothesis:
    name: str
    value: float
    threshold: float
    relation: str  # "<", "<=", ">", ">="
    passed: bool
    boundary: bool = False
    informational: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _compare(name, value, threshold, relation, scale, informational=False) -> Hypothesis:
    """Strict relations need a margin of ``BAND * scale``, weak ones tolerate it."""
    band = BAND * max(abs(scale), 1e-300)
    diff = value - threshold
    if relation == "<":
        ok = diff < -band
    elif relation == "<=":
        ok = diff <= band
    elif relation == ">":
        ok = diff > band
    elif relation == ">=":
        ok = diff >= -band
    else:
        raise ValueError(f"unknown relation {relation!r}")
    return Hypothesis(name, float(value), float(threshold), relation, bool(ok), abs(diff) <= band, informational)


@dataclass(frozen=True)
class MembershipReport:
    set_name: str
    rows: tuple[Hypothesis, ...]

    @property
    def overall(self) -> bool:
        return all(r.passed for r in self.rows if not r.informational)

    def failed_rows(self) -> list[str]:
        return [r.name for r in self.rows if not r.informational and not r.passed]

    def to_dict(self) -> dict:
        return {"set": self.set_name, "overall": self.overall, "rows": [r.to_dict() for r in self.rows]}


def _functionals(state, params: ModelParams) -> tuple[fn.FunctionalReport, float]:
    """Report plus a tail-mass surrogate for membership in the weighted space."""
    if isinstance(state, fn.FunctionalReport):
        return state, math.nan
    if isinstance(state, RadialState):
        ops = RadialOps(state.mesh)
        rep = radial_report(state, params, ops)
        psi2 = ops.psi(state) ** 2
        far = state.mesh.r > 0.5 * state.mesh.r_max / state.mesh.kappa
        total = ops.area(psi2)
        tail = ops.area(np.where(far, psi2, 0.0)) / total if total > 0 else 0.0
        return rep, tail
    rep = fn.report(state, params)
    return rep, fn.tail_mass_fraction(reconstruct(state), state.grid)


def _scale(rep: fn.FunctionalReport) -> float:
    return abs(rep.form) + rep.lpNorm + rep.chargeSq


def membership_u(state, params: ModelParams, gs: GroundStateResult, tail_tol: float = 1e-6) -> MembershipReport:
    """``S < d(omega)``, ``E >= 0``, ``Q < 0``; tail mass as an informational row."""
    rep, tail = _functionals(state, params)
    d = gs.d_omega
    sc = _scale(rep)
    rows = (
        _compare("action < d(omega)", rep.action, d, "<", d),
        _compare("energy >= 0", rep.energy, 0.0, ">=", sc),
        _compare("Q < 0", rep.qvir, 0.0, "<", sc),
        Hypothesis("tail mass", tail, tail_tol, "<=", bool(tail <= tail_tol) if tail == tail else False, informational=True),
    )
    return MembershipReport("U", rows)


def membership_v(state, params: ModelParams, gs: GroundStateResult, tail_tol: float = 1e-6) -> MembershipReport:
    """``S < d``, ``Q < 0``, ``||psi|| <= ||phi_omega||``, ``||psi||_{p+1} > ||phi_omega||_{p+1}``."""
    rep, tail = _functionals(state, params)
    ref = gs.report
    d = gs.d_omega
    sc = _scale(rep)
    rows = (
        _compare("action < d(omega)", rep.action, d, "<", d),
        _compare("Q < 0", rep.qvir, 0.0, "<", sc),
        _compare("mass <= ground-state mass", rep.mass, ref.mass, "<=", ref.mass),
        _compare("Lp norm > ground-state Lp norm", rep.lpNorm, ref.lpNorm, ">", ref.lpNorm),
        Hypothesis("tail mass", tail, tail_tol, "<=", bool(tail <= tail_tol) if tail == tail else False, informational=True),
    )
    return MembershipReport("V", rows)


MEMBERSHIP = {"U": membership_u, "V": membership_v}


# --- manifests ---------------------------------------------------------------


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {k: _plain(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


@dataclass
class RunManifest:
    kind: str
    params: dict
    grid: dict | None
    sigmas: list[float]
    options: dict
    seed: int = 0
    code_version: str = __version__
    started: float = field(default_factory=time.time)
    finished: float | None = None
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def digest(self) -> str:
        """Hash over everything that determines the result (not times or paths)."""
        core = {k: v for k, v in self.to_dict().items() if k not in ("started", "finished", "inputs", "outputs")}
        return hashlib.sha256(json.dumps(core, sort_keys=True).encode()).hexdigest()[:16]


def _grid_dict(grid: GridSpec | None):
    return None if grid is None else {"n": grid.n, "half_extent": grid.half_extent}


# --- single experiments ------------------------------------------------------


def run_eigen(alpha: float, grid: GridSpec, tol: float = 1e-10, seed: int = 0) -> dict:
    rq, s = eigenpair_validate(alpha, grid, tol=tol, seed=seed)
    exact = bound_state_energy(alpha)
    return {
        "alpha": alpha,
        "energy": rq,
        "exact": exact,
        "relError": abs(rq - exact) / abs(exact),
        "q": [s.q.real, s.q.imag],
        "state": s,
    }


def ground_state(params: ModelParams, n: int, box: float, opts: SolverOptions | None = None) -> GroundStateResult:
    """Ground state on ``GridSpec(n, box / sqrt(omega))``."""
    return solve_ground_state(params, GridSpec(n, box / math.sqrt(params.omega)), opts)


def sigma_report(gs: GroundStateResult, state_lp: float | None = None, **kw):
    p = gs.params.p
    c = abc_from_report(gs.report, p)
    s0 = None if state_lp is None else sigma_zero(state_lp, gs.report.lpNorm, p)
    return sigma_analysis(c, 0.5 * gs.params.omega * gs.report.mass, p, sigma_zero_value=s0, **kw)


def smallest_positive_energy_omega(alpha: float, p: float, omegas=CI_OMEGAS, opts: SolverOptions | None = None):
    """First ``omega`` of ``omegas`` (ascending) with ``E(phi_omega) > 0``, or ``None``."""
    for om in sorted(omegas):
        params = ModelParams(alpha=alpha, p=p, g=-1, omega=om)
        if not om > -bound_state_energy(alpha):
            continue
        prof, _, _ = solve_radial(params, opts)
        if radial_report(prof, params).energy > 0:
            return om
    return None


@dataclass
class BlowupRunOptions:
    membership: str = "U"
    require_membership: bool = True
    phase_limit: float = 0.05
    t_end: float | None = None  # default: 1.1 x concavity bound, else 5/omega
    samples: int = 40
    tail_fraction: float = 0.25
    growth_factor: float = 10.0
    min_halvings: int = 6
    fd_tolerance: float = 0.05
    max_steps: int = 2_000_000


@dataclass
class TrajectoryChecks:
    samples: int
    q_negative: bool
    max_q: float
    concavity_ok: bool
    variance_concave: bool
    max_second_difference: float
    concavity_budget: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BlowupRun:
    manifest: RunManifest
    trace: EvolutionTrace
    membership: MembershipReport
    grid_membership: MembershipReport
    verdict: BlowupVerdict
    checks: TrajectoryChecks
    t_star_interval: tuple[float | None, float | None]
    initial_distance: float

    def to_dict(self) -> dict:
        return {
            "manifest": self.manifest.to_dict(),
            "digest": self.manifest.digest(),
            "membership": self.membership.to_dict(),
            "gridMembership": self.grid_membership.to_dict(),
            "verdict": self.verdict.to_dict(),
            "checks": self.checks.to_dict(),
            "tStarInterval": list(self.t_star_interval),
            "distance": self.initial_distance,
            "trace": self.trace.summary(),
        }


def second_differences(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Three-point second derivative on a non-uniform lattice."""
    h0 = t[1:-1] - t[:-2]
    h1 = t[2:] - t[1:-1]
    return 2.0 * (h0 * y[2:] - (h0 + h1) * y[1:-1] + h1 * y[:-2]) / (h0 * h1 * (h0 + h1))


def trajectory_checks(trace: EvolutionTrace, d_omega: float, tol: float = 0.05) -> TrajectoryChecks:
    """``Q < 0`` at every sample and ``(1/8) I'' < 2 (S(psi0) - d)`` up to ``tol``."""
    t = np.asarray(trace.times)
    q = trace.series("qvir")
    var = trace.series("variance")
    budget = 2.0 * (trace.reports[0].action - d_omega)
    if t.size >= 3:
        d2 = second_differences(t, var)
        conc = bool(np.all(d2 / 8.0 <= budget + tol * abs(budget)))
        concave = bool(np.all(d2 < 0))
        mx = float(d2.max())
    else:
        conc, concave, mx = True, True, math.nan
    return TrajectoryChecks(
        samples=int(t.size),
        q_negative=bool(np.all(q < 0)),
        max_q=float(q.max()),
        concavity_ok=conc,
        variance_concave=concave,
        max_second_difference=mx,
        concavity_budget=budget,
    )


def d_half_distance(a: SingularState, b: SingularState) -> float:
    """``||a - b||`` in the energy-space surrogate, both moved to ``b``'s lambda."""
    if a.lam != b.lam:
        a = change_lambda(a, b.lam)
    return fn.d_half_norm(a - b)


def discrete_ground_action(gs: GroundStateResult) -> float:
    """``d(omega)`` in the functionals the scheme conserves.

    The evolution measures actions with the grid rule, so the concavity
    budget ``S(psi0) - d`` compares against the action of the scheme's own
    standing wave (``refine_on_grid``).  Falls back to the cutoff-filtered
    sampled profile if the refinement does not converge.
    """
    try:
        s = refine_on_grid(gs.state, gs.params)[0]
    except ConvergenceError as exc:
        log.warning("grid refinement failed (%s); using the sampled profile", exc)
        s = remove_cutoff_mode(gs.state, gs.params.alpha)[0]
    return fn.report(s, gs.params, rule=fn.GRID).action


def scaled_datum(gs: GroundStateResult, sigma: float) -> tuple[RadialState, SingularState]:
    prof = scale_radial(gs.profile, sigma)
    return prof, to_grid_state(prof, gs.state.grid)


def run_blowup(
    gs: GroundStateResult,
    sigma: float,
    opts: BlowupRunOptions | None = None,
    seed: int = 0,
) -> BlowupRun:
    """Evolve ``T^sigma phi_omega`` and judge blow-up.

    Membership is certified on the radial profile; the sampled grid datum
    gets its own (informational) membership report.
    """
    opts = opts or BlowupRunOptions()
    params, grid = gs.params, gs.state.grid
    prof, s0 = scaled_datum(gs, sigma)
    member = MEMBERSHIP[opts.membership](prof, params, gs)
    if opts.require_membership:
        if not params.p > 3:
            raise MembershipError(
                MembershipReport(opts.membership, (Hypothesis("p > 3", params.p, 3.0, ">", False),))
            )
        if not member.overall:
            raise MembershipError(member)
    grid_member = MEMBERSHIP[opts.membership](s0, params, gs)
    d_grid = discrete_ground_action(gs)
    r0 = fn.report(remove_cutoff_mode(s0, params.alpha)[0], params, rule=fn.GRID)
    bound = concavity_bound(r0.variance, r0.varianceRate, r0.action, d_grid)
    t_end = opts.t_end or (1.1 * bound if bound else 5.0 / params.omega)
    peak = float(np.abs(reconstruct(s0)).max())
    dt0 = opts.phase_limit / peak ** (params.p - 1)
    dt0 = min(dt0, t_end / opts.samples)
    eo = EvolveOptions(
        dt=dt0,
        sample_dt=t_end / opts.samples,
        phase_limit=opts.phase_limit,
        tail_fraction=opts.tail_fraction,
        growth_factor=opts.growth_factor,
        min_halvings=opts.min_halvings,
        max_steps=opts.max_steps,
    )
    manifest = RunManifest(
        kind="blowup",
        params=params.to_dict(),
        grid=_grid_dict(grid),
        sigmas=[sigma],
        options={"run": asdict(opts), "evolve": asdict(eo), "dGrid": d_grid, "dOmega": gs.d_omega},
        seed=seed,
    )
    trace = evolve(s0, params, t_end, eo)
    verdict = detect_blowup(trace, BlowupOptions(opts.growth_factor, opts.min_halvings), d_grid)
    checks = trajectory_checks(trace, d_grid, opts.fd_tolerance)
    manifest.finished = time.time()
    return BlowupRun(
        manifest=manifest,
        trace=trace,
        membership=member,
        grid_membership=grid_member,
        verdict=verdict,
        checks=checks,
        t_star_interval=(verdict.detector_time, verdict.analytic_bound),
        initial_distance=d_half_distance(s0, gs.state),
    )


@dataclass
class ScanRow:
    sigma: float
    distance: float
    membership: bool
    flag: bool
    termination: str | None
    detector_time: float | None
    analytic_bound: float | None
    growth: float
    q_negative: bool
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def run_instability_scan(
    gs: GroundStateResult,
    sigmas=(1.5, 1.2, 1.1, 1.05),
    opts: BlowupRunOptions | None = None,
    control: bool = True,
) -> list[ScanRow]:
    """One blow-up run per sigma (decreasing to 1) plus the ``sigma = 1`` control.

    Defaults to the V set: once ``S''(1) <= 0`` every ``sigma > 1`` lies in
    it, whereas ``E(phi^sigma) >= 0`` (needed for U) fails for large sigma.
    """
    opts = opts or BlowupRunOptions(membership="V")
    rows = []
    todo = list(sigmas) + ([1.0] if control else [])
    for sig in todo:
        o = opts
        if sig == 1.0:
            o = dataclasses.replace(opts, require_membership=False, t_end=opts.t_end or 5.0 / gs.params.omega)
        try:
            run = run_blowup(gs, sig, o)
        except MembershipError as exc:
            _, s0 = scaled_datum(gs, sig)
            rows.append(
                ScanRow(sig, d_half_distance(s0, gs.state), False, False, None, None, None, math.nan, False, str(exc))
            )
            continue
        rows.append(
            ScanRow(
                sigma=sig,
                distance=run.initial_distance,
                membership=run.membership.overall,
                flag=run.verdict.flag,
                termination=run.trace.termination_reason,
                detector_time=run.verdict.detector_time,
                analytic_bound=run.verdict.analytic_bound,
                growth=run.verdict.growth,
                q_negative=run.checks.q_negative,
            )
        )
    return rows


# --- virial ------------------------------------------------------------------


@dataclass
class VirialConfig:
    """Smooth charged datum ``(H + mu)^{-1}`` applied to a Gaussian."""

    alpha: float = 0.3
    p: float = 3.0
    g: float = -1.0
    amplitude: float = 1.5  # sqrt of the mass
    width: float = 1.0
    mu: float = 4.0
    n: int = 256
    half_extent: float = 24.0
    dt: float = 2.5e-4
    sample_dt: float = 0.01
    t_end: float = 0.3
    window: tuple[float, float] = (0.03, 0.27)
    phase_limit: float = 0.05


def virial_datum(cfg: VirialConfig) -> SingularState:
    grid = GridSpec(cfg.n, cfg.half_extent)
    gauss = np.exp(-grid.r2 / (2.0 * cfg.width**2)).astype(complex)
    s = apply_resolvent(cfg.mu, ComplexField(gauss, grid, POSITION), cfg.alpha)
    return s * (cfg.amplitude / math.sqrt(fn.mass(s)))


def run_virial(cfg: VirialConfig):
    s0 = virial_datum(cfg)
    params = ModelParams(alpha=cfg.alpha, p=cfg.p, g=cfg.g, omega=1.0)
    eo = EvolveOptions(dt=cfg.dt, sample_dt=cfg.sample_dt, phase_limit=cfg.phase_limit, tail_fraction=1.0)
    trace = evolve(s0, params, cfg.t_end, eo)
    return trace, virial_check(trace, cfg.window)


# --- sweeps ------------------------------------------------------------------


@dataclass
class SweepConfig:
    kind: str = "groundstate"  # groundstate | membership | blowup | sigma
    alpha: list[float] = field(default_factory=lambda: [0.0])
    p: list[float] = field(default_factory=lambda: [5.0])
    omega: list[float] = field(default_factory=lambda: [20.0])
    sigma: list[float] = field(default_factory=lambda: [1.2])
    n: int = 128
    box: float = 8.0  # half extent times sqrt(omega)
    membership: str = "U"
    phase_limit: float = 0.05
    samples: int = 20
    t_end: float | None = None
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown sweep keys: {sorted(unknown)}")
        d = dict(d)
        for k in ("alpha", "p", "omega", "sigma"):
            if k in d and not isinstance(d[k], list):
                d[k] = [d[k]]
        return cls(**d)

    def points(self):
        return list(itertools.product(self.alpha, self.p, self.omega, self.sigma))


def _sweep_point(args) -> dict:
    cfg, idx, (alpha, p, omega, sigma) = args
    params = ModelParams(alpha=alpha, p=p, g=-1, omega=omega)
    manifest = RunManifest(
        kind=cfg.kind,
        params=params.to_dict(),
        grid={"n": cfg.n, "box": cfg.box},
        sigmas=[sigma],
        options=asdict(cfg),
        seed=cfg.seed,
    )
    row = {"index": idx, "kind": cfg.kind, "digest": manifest.digest(), "params": params.to_dict(), "sigma": sigma}
    try:
        gs = ground_state(params, cfg.n, cfg.box, SolverOptions(seed=cfg.seed))
        row["groundState"] = {
            "dOmega": gs.d_omega,
            "residual": gs.residual,
            "report": gs.report.to_dict(),
            "classification": gs.classification.to_dict(),
        }
        if cfg.kind in ("membership", "blowup"):
            prof = scale_radial(gs.profile, sigma)
            row["membershipU"] = membership_u(prof, params, gs).to_dict()
            row["membershipV"] = membership_v(prof, params, gs).to_dict()
        if cfg.kind == "sigma":
            sa = sigma_report(gs)
            row["sigma_analysis"] = {k: v for k, v in sa.to_dict().items() if k in ("A", "B", "C", "sigmaStar", "notes")}
        if cfg.kind == "blowup":
            o = BlowupRunOptions(
                membership=cfg.membership, phase_limit=cfg.phase_limit, samples=cfg.samples, t_end=cfg.t_end
            )
            run = run_blowup(gs, sigma, o, seed=cfg.seed)
            row["verdict"] = run.verdict.to_dict()
            row["checks"] = run.checks.to_dict()
            row["termination"] = run.trace.termination_reason
        row["status"] = "ok"
    except MembershipError as exc:
        row["status"] = "membershipFailed"
        row["error"] = str(exc)
    except Exception as exc:  # recorded, never fatal for the sweep
        row["status"] = "error"
        row["error"] = f"{type(exc).__name__}: {exc}"
    row["timestamp"] = time.time()
    return row


def energy_sign_bracket(rows: list[dict]) -> dict:
    """Per ``(alpha, p)``: the omegas around the first sign change of ``E(phi_omega)``."""
    groups: dict[tuple, list] = {}
    for r in rows:
        if r.get("status") != "ok" or "groundState" not in r:
            continue
        key = (r["params"]["alpha"], r["params"]["p"])
        groups.setdefault(key, []).append((r["params"]["omega"], r["groundState"]["report"]["energy"]))
    out = {}
    for (a, p), vals in groups.items():
        vals = sorted(set(vals))
        bracket = None
        for (o0, e0), (o1, e1) in zip(vals, vals[1:]):
            if e0 <= 0 < e1:
                bracket = [o0, o1]
                break
        out[f"alpha={a},p={p}"] = {"bracket": bracket, "samples": vals}
    return out


def sweep(cfg: SweepConfig, out_path, workers: int = 1) -> list[dict]:
    """Run every grid point; rows are appended in index order as they finish."""
    jobs = [(cfg, i, pt) for i, pt in enumerate(cfg.points())]
    rows = []
    with JsonlAppender(out_path) as app:
        if workers <= 1:
            results = map(_sweep_point, jobs)
            for row in results:
                app.append(row)
                rows.append(row)
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for row in pool.map(_sweep_point, jobs):
                    app.append(row)
                    rows.append(row)
    return rows
