"""Split-step time integration of ``i psi_t = H_alpha psi + g |psi|^{p-1} psi``.

The linear flow is the Cayley transform

    psi <- (1 - i a H)(1 + i a H)^{-1} psi = (2/(i a)) (H + z)^{-1} psi - psi,
    a = dt/2,  z = -2i/dt,

one Krein solve in the pair space, exactly unitary for the pair-space mass.
The nonlinear flow is the pointwise phase rotation of the band-limited grid
field with the charge held fixed; the split-step scheme conserves the
resulting discrete energy (functionals with ``rule="grid"``) up to the
splitting error.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import functionals as fn
from .hamiltonian import (
    ModelParams,
    SingularState,
    gram_apply,
    green_hat,
    reconstruct,
    remove_cutoff_mode,
    solve_shifted,
)
from .numerics import fft, ifft

log = logging.getLogger(__name__)


class Termination(str, Enum):
    REACHED_T_END = "reachedTEnd"
    BLOWUP_DETECTED = "blowupDetected"
    DT_UNDERFLOW = "dtUnderflow"
    RESOLUTION_LOSS = "resolutionLoss"


@dataclass
class EvolveOptions:
    dt: float = 1e-3
    dt_min: float | None = None  # default dt * 2^-24
    sample_every: int = 10
    sample_dt: float | None = None  # sample on a uniform time lattice instead
    growth_limit: float = 0.05  # per-step relative dHalfNorm growth
    phase_limit: float = 0.5  # dt * max |psi|^{p-1}
    tail_fraction: float = 0.25  # H^1 share of phi beyond 2/3 k_max
    max_steps: int = 10_000_000
    keep_states: bool = False
    filter_cutoff_mode: bool = True  # project the initial datum off the cutoff mode
    growth_factor: float = 10.0  # blow-up detector, stop once reached
    min_halvings: int = 6


@dataclass
class BlowupOptions:
    growth_factor: float = 10.0
    min_halvings: int = 6


@dataclass
class EvolutionTrace:
    params: ModelParams
    times: list[float] = field(default_factory=list)
    dts: list[float] = field(default_factory=list)
    reports: list[fn.FunctionalReport] = field(default_factory=list)
    dt_history: list[tuple[float, float]] = field(default_factory=list)
    halvings: int = 0
    steps: int = 0
    filtered_mass: float = 0.0
    blowup_flag: bool = False
    t_star_estimate: float | None = None
    termination: Termination | None = None
    states: list[SingularState] = field(default_factory=list)
    final_state: SingularState | None = None

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.reports])

    @property
    def mass(self):
        return self.series("mass")

    @property
    def energy(self):
        return self.series("energy")

    @property
    def variance(self):
        return self.series("variance")

    @property
    def termination_reason(self) -> str | None:
        return None if self.termination is None else self.termination.value

    def columns(self) -> list[str]:
        return ["time", "dt"] + fn.FunctionalReport.columns()

    def rows(self):
        for t, dt, rep in zip(self.times, self.dts, self.reports):
            d = rep.to_dict()
            yield [t, dt] + [d[c] for c in fn.FunctionalReport.columns()]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            for row in self.rows():
                w.writerow([repr(float(v)) for v in row])

    def summary(self) -> dict:
        return {
            "termination": self.termination_reason,
            "steps": self.steps,
            "filteredMass": self.filtered_mass,
            "halvings": self.halvings,
            "tEnd": self.times[-1] if self.times else None,
            "blowupFlag": self.blowup_flag,
            "tStarEstimate": self.t_star_estimate,
        }


# --- steps -------------------------------------------------------------------


def linear_step(s: SingularState, dt: float, alpha: float) -> SingularState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    a = 0.5 * dt
    z = -2j / dt
    phi, q = solve_shifted(gram_apply(s), z, s.lam, alpha, s.grid)
    c = 2.0 / (1j * a)
    return SingularState(c * phi - s.phi_hat, c * q - s.q, s.lam, s.grid)


def _rotate(s: SingularState, dt: float, params: ModelParams, g_hat=None):
    """Phase rotation by ``dt``; returns the new state and ``max |psi|``."""
    grid = s.grid
    if g_hat is None:
        g_hat = green_hat(s.lam, grid)
    psi = ifft(s.phi_hat + s.q * g_hat, grid)
    mod = np.abs(psi)
    peak = float(mod.max())
    if params.g == 0 or dt == 0:
        return s, peak
    psi *= np.exp((-1j * params.g * dt) * mod ** (params.p - 1))
    return SingularState(fft(psi, grid) - s.q * g_hat, s.q, s.lam, grid), peak


def nonlinear_step(s: SingularState, dt: float, params: ModelParams) -> SingularState:
    """Exact flow of ``i psi_t = g |psi|^{p-1} psi`` on the grid field, q fixed."""
    return _rotate(s, dt, params)[0]


def strang_step(s: SingularState, dt: float, params: ModelParams) -> SingularState:
    s = nonlinear_step(s, 0.5 * dt, params)
    s = linear_step(s, dt, params.alpha)
    return nonlinear_step(s, 0.5 * dt, params)


def max_phase_rate(s: SingularState, p: float) -> float:
    return float(np.abs(reconstruct(s)).max() ** (p - 1))


def spectral_tail_fraction(s: SingularState) -> float:
    """Share of ``||phi||_{H^1}^2`` carried by ``|k| > 2/3 k_max``."""
    w = (1.0 + s.grid.k2) * np.abs(s.phi_hat) ** 2
    total = float(w.sum())
    if total == 0:
        return 0.0
    outer = s.grid.k2 > (2.0 / 3.0 * s.grid.k_max) ** 2
    return float(w[outer].sum()) / total


# --- driver ------------------------------------------------------------------


def evolve(s0: SingularState, params: ModelParams, t_end: float, opts: EvolveOptions | None = None) -> EvolutionTrace:
    """Strang splitting with dt halving; termination is encoded in the trace.

    Consecutive nonlinear half steps are fused: the loop carries the state
    right after the linear step together with the phase time still owed,
    and only materialises the synchronised state when sampling.
    """
    opts = opts or EvolveOptions()
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    trace = EvolutionTrace(params)
    grid, lam, alpha, p = s0.grid, s0.lam, params.alpha, params.p
    g_hat = green_hat(lam, grid)
    dt = opts.dt
    dt_min = opts.dt_min if opts.dt_min is not None else opts.dt * 2.0**-24
    nonlinear = params.g != 0

    def sample(s, t):
        trace.times.append(t)
        trace.dts.append(dt)
        trace.reports.append(fn.report(s, params, rule=fn.GRID))
        if opts.keep_states:
            trace.states.append(s)

    def halve(t):
        nonlocal dt
        dt *= 0.5
        trace.halvings += 1
        trace.dt_history.append((t, dt))
        return dt >= dt_min

    if opts.filter_cutoff_mode:
        s0, trace.filtered_mass = remove_cutoff_mode(s0, alpha)
    d0 = fn.d_half_norm(s0)
    mid, owed, t = s0, 0.0, 0.0
    d_mid = d0
    trace.dt_history.append((0.0, dt))
    sample(s0, 0.0)
    since = 0
    next_sample = opts.sample_dt if opts.sample_dt is not None else math.inf
    reason = None
    while reason is None:
        if t >= t_end * (1 - 1e-12) or trace.steps >= opts.max_steps:
            reason = Termination.REACHED_T_END
            break
        h = min(dt, t_end - t)
        if opts.sample_dt is not None:
            h = min(h, next_sample - t)
        pre, peak = _rotate(mid, owed + 0.5 * h, params, g_hat)
        if nonlinear and h * peak ** (p - 1) > opts.phase_limit:
            if not halve(t):
                reason = Termination.DT_UNDERFLOW
            continue
        trial = linear_step(pre, h, alpha)
        d_new = fn.d_half_norm(trial)
        if d_new > (1.0 + opts.growth_limit) * d_mid:
            if not halve(t):
                reason = Termination.DT_UNDERFLOW
            continue
        mid, owed, t, d_mid = trial, 0.5 * h, t + h, d_new
        trace.steps += 1
        since += 1
        if opts.sample_dt is not None:
            due = t >= next_sample * (1 - 1e-12)
            if due:
                next_sample += opts.sample_dt
        else:
            due = since >= opts.sample_every
        if due:
            since = 0
            sample(_rotate(mid, owed, params, g_hat)[0], t)
        if spectral_tail_fraction(mid) > opts.tail_fraction:
            reason = Termination.RESOLUTION_LOSS
        elif d_new >= opts.growth_factor * d0 and trace.halvings >= opts.min_halvings:
            reason = Termination.BLOWUP_DETECTED
    final = _rotate(mid, owed, params, g_hat)[0]
    if trace.times[-1] != t:
        sample(final, t)
    trace.termination = reason
    trace.final_state = final
    return trace


# --- diagnostics -------------------------------------------------------------


@dataclass
class VirialReport:
    times: np.ndarray
    second_difference: np.ndarray
    eight_q: np.ndarray
    eight_q_ablated: np.ndarray
    first_difference: np.ndarray
    rate: np.ndarray
    max_abs_deviation: float
    max_rel_deviation: float
    max_rel_deviation_ablated: float
    max_rel_deviation_rate: float

    @property
    def ablation_factor(self) -> float:
        if self.max_rel_deviation == 0:
            return math.inf
        return self.max_rel_deviation_ablated / self.max_rel_deviation

    def to_dict(self) -> dict:
        return {
            "maxAbsDeviation": self.max_abs_deviation,
            "maxRelDeviation": self.max_rel_deviation,
            "maxRelDeviationAblated": self.max_rel_deviation_ablated,
            "maxRelDeviationRate": self.max_rel_deviation_rate,
            "ablationFactor": self.ablation_factor,
        }


def virial_check(trace: EvolutionTrace, window: tuple[float, float] | None = None) -> VirialReport:
    """Finite differences of the variance against ``8 Q`` and the variance rate.

    Uses uniformly spaced samples (optionally restricted to ``window``).
    The relative deviation is taken against ``max |8 Q|`` over the window.
    """
    t = np.asarray(trace.times)
    var = trace.series("variance")
    qv = trace.series("qvir")
    cs = trace.series("chargeSq")
    rate = trace.series("varianceRate")
    keep = np.ones_like(t, dtype=bool)
    if window is not None:
        keep = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    t, var, qv, cs, rate = t[keep], var[keep], qv[keep], cs[keep], rate[keep]
    if t.size < 5:
        raise ValueError("virial check needs at least 5 samples")
    h = np.diff(t)
    if not np.allclose(h, h[0], rtol=1e-6, atol=1e-12):
        raise ValueError("virial check needs uniformly spaced samples")
    h = h[0]
    d2 = (var[2:] - 2 * var[1:-1] + var[:-2]) / h**2
    eq = 8.0 * qv[1:-1]
    eq_abl = 8.0 * (qv[1:-1] - cs[1:-1] / fn.FOUR_PI)
    d1 = (var[2:] - var[:-2]) / (2 * h)
    scale = max(float(np.abs(eq).max()), 1e-300)
    dev = np.abs(d2 - eq)
    rscale = max(float(np.abs(rate[1:-1]).max()), 1e-300)
    return VirialReport(
        times=t[1:-1],
        second_difference=d2,
        eight_q=eq,
        eight_q_ablated=eq_abl,
        first_difference=d1,
        rate=rate[1:-1],
        max_abs_deviation=float(dev.max()),
        max_rel_deviation=float(dev.max() / scale),
        max_rel_deviation_ablated=float(np.abs(d2 - eq_abl).max() / scale),
        max_rel_deviation_rate=float(np.abs(d1 - rate[1:-1]).max() / rscale),
    )


def concavity_bound(i0: float, di0: float, action0: float, d_omega: float) -> float | None:
    """Positive root of ``I0 + I0' t - (c/2) t^2`` with ``c = -16 (S(psi0) - d(omega))``."""
    c = -16.0 * (action0 - d_omega)
    if not c > 0:
        return None
    return (di0 + math.sqrt(di0 * di0 + 2.0 * c * i0)) / c


@dataclass
class BlowupVerdict:
    flag: bool
    detector_time: float | None
    analytic_bound: float | None
    growth: float
    halvings: int

    def to_dict(self) -> dict:
        return {
            "flag": self.flag,
            "detectorTime": self.detector_time,
            "analyticBound": self.analytic_bound,
            "growth": self.growth,
            "halvings": self.halvings,
        }


def detect_blowup(trace: EvolutionTrace, opts: BlowupOptions | None = None, d_omega: float | None = None) -> BlowupVerdict:
    """Flag blow-up when dHalfNorm grew ``growth_factor``-fold with enough dt halvings."""
    opts = opts or BlowupOptions()
    d = trace.series("dHalfNorm")
    growth = float(d.max() / d[0])
    hit = np.nonzero(d >= opts.growth_factor * d[0])[0]
    flag = bool(hit.size and trace.halvings >= opts.min_halvings)
    t_det = float(trace.times[hit[0]]) if flag else None
    bound = None
    if d_omega is not None:
        r0 = trace.reports[0]
        bound = concavity_bound(r0.variance, r0.varianceRate, r0.action, d_omega)
    trace.blowup_flag = flag
    trace.t_star_estimate = t_det
    return BlowupVerdict(flag, t_det, bound, growth, trace.halvings)
