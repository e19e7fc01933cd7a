"""Command line interface: ``ptnls <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import experiments as ex
from . import io
from .evolution import Termination
from .groundstate import ConvergenceError, SolverOptions
from .hamiltonian import ModelParams
from .numerics import GridSpec, set_threads

log = logging.getLogger("ptnls")

EXIT_OK = 0
EXIT_MEMBERSHIP = 2
EXIT_NUMERICAL = 3
EXIT_USAGE = 1


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _merge(args: argparse.Namespace, section: dict, defaults: dict) -> dict:
    """Defaults < config file section < explicit command line flags."""
    out = dict(defaults)
    unknown = set(section) - set(defaults)
    if unknown:
        raise SystemExit(f"unknown config keys: {sorted(unknown)}")
    out.update(section)
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in rows:
            w.writerow(row)


# --- subcommands -------------------------------------------------------------

EIGEN = {"alpha": [-0.2, 0.0, 0.3], "n": 512, "half_extent": 20.0, "tol": 1e-10}


def cmd_eigen(cfg: dict, out: Path, seed: int) -> int:
    grid = GridSpec(int(cfg["n"]), float(cfg["half_extent"]))
    alphas = cfg["alpha"] if isinstance(cfg["alpha"], list) else [cfg["alpha"]]
    results = []
    for a in alphas:
        r = ex.run_eigen(float(a), grid, tol=float(cfg["tol"]), seed=seed)
        io.write_profile(out / f"eigen_alpha{a:+.4f}", r.pop("state"), {"alpha": a, "energy": r["energy"]})
        results.append(r)
        print(f"alpha={a:+.4f} E={r['energy']:.10g} exact={r['exact']:.10g} rel={r['relError']:.2e}")
    io.write_json(out / "eigen.json", {"grid": grid.to_dict(), "results": results})
    return EXIT_OK


GROUND = {"alpha": 0.0, "p": 5.0, "omega": 20.0, "n": 256, "box": 8.0, "tol": 1e-8}


def _ground(cfg: dict, seed: int):
    params = ModelParams(alpha=float(cfg["alpha"]), p=float(cfg["p"]), g=-1, omega=float(cfg["omega"]))
    return ex.ground_state(params, int(cfg["n"]), float(cfg["box"]), SolverOptions(tol=float(cfg["tol"]), seed=seed))


def cmd_groundstate(cfg: dict, out: Path, seed: int) -> int:
    gs = _ground(cfg, seed)
    io.write_profile(out / "groundstate_profile", gs.state, {"params": gs.params.to_dict()})
    io.write_json(out / "groundstate.json", gs.to_dict())
    c = gs.classification
    print(f"d(omega)={gs.d_omega:.10g} residual={gs.residual:.2e} E={c.energy:.6g} S''(1)={c.s2:.6g}")
    return EXIT_OK


SIGMA = {**GROUND, "sigma_min": 0.25, "sigma_max": 4.0, "samples": 801}


def cmd_sigma_scan(cfg: dict, out: Path, seed: int) -> int:
    gs = _ground(cfg, seed)
    sa = ex.sigma_report(gs, sigma_min=cfg["sigma_min"], sigma_max=cfg["sigma_max"], samples=int(cfg["samples"]))
    io.write_json(out / "sigma.json", {"params": gs.params.to_dict(), **sa.to_dict()})
    _write_csv(out / "sigma.csv", sa.csv_rows())
    print(f"A={sa.A:.8g} B={sa.B:.8g} C={sa.C:.8g} sigma*={sa.sigma_star}")
    return EXIT_OK


VIRIAL = {f.name: f.default for f in dataclasses.fields(ex.VirialConfig)}
VIRIAL["window"] = list(VIRIAL["window"])


def cmd_virial(cfg: dict, out: Path, seed: int) -> int:
    vc = ex.VirialConfig(**{**cfg, "window": tuple(cfg["window"])})
    trace, rep = ex.run_virial(vc)
    trace.to_csv(out / "trace.csv")
    io.write_checkpoint(out / "checkpoint", trace.final_state, trace.params, trace.times[-1], trace.dts[-1], seed)
    io.write_json(out / "virial.json", {"config": dataclasses.asdict(vc), "trace": trace.summary(), **rep.to_dict()})
    print(f"virial deviation={rep.max_rel_deviation:.3e} ablated={rep.max_rel_deviation_ablated:.3e}")
    return EXIT_OK if trace.termination != Termination.DT_UNDERFLOW else EXIT_NUMERICAL


BLOWUP = {
    **GROUND,
    "omega": "auto",
    "sigma": 1.2,
    "membership": "U",
    "phase_limit": 0.05,
    "samples": 40,
    "t_end": None,
}


def _blowup_ground(cfg: dict, seed: int):
    if cfg["omega"] == "auto":
        om = ex.smallest_positive_energy_omega(float(cfg["alpha"]), float(cfg["p"]))
        if om is None:
            raise ConvergenceError("no sampled omega gives a positive ground-state energy")
        cfg = {**cfg, "omega": om}
        log.info("auto-selected omega = %g", om)
    return _ground(cfg, seed)


def _run_opts(cfg: dict) -> ex.BlowupRunOptions:
    return ex.BlowupRunOptions(
        membership=cfg["membership"],
        phase_limit=float(cfg["phase_limit"]),
        samples=int(cfg["samples"]),
        t_end=None if cfg["t_end"] is None else float(cfg["t_end"]),
    )


def cmd_blowup(cfg: dict, out: Path, seed: int) -> int:
    gs = _blowup_ground(cfg, seed)
    try:
        run = ex.run_blowup(gs, float(cfg["sigma"]), _run_opts(cfg), seed=seed)
    except ex.MembershipError as exc:
        io.write_json(out / "blowup.json", {"membership": exc.report.to_dict(), "status": "membershipFailed"})
        print(str(exc), file=sys.stderr)
        return EXIT_MEMBERSHIP
    run.trace.to_csv(out / "trace.csv")
    io.write_checkpoint(out / "checkpoint", run.trace.final_state, gs.params, run.trace.times[-1], run.trace.dts[-1], seed)
    run.manifest.outputs = [str(out / "trace.csv"), str(out / "checkpoint")]
    io.write_json(out / "blowup.json", run.to_dict())
    v = run.verdict
    print(
        f"termination={run.trace.termination_reason} flag={v.flag} growth={v.growth:.3g} "
        f"T*=[{v.detector_time}, {v.analytic_bound}] Q<0={run.checks.q_negative}"
    )
    return EXIT_NUMERICAL if run.trace.termination == Termination.DT_UNDERFLOW else EXIT_OK


INSTAB = {**BLOWUP, "sigmas": [1.5, 1.2, 1.1, 1.05], "membership": "V"}
del INSTAB["sigma"]


def cmd_instability(cfg: dict, out: Path, seed: int) -> int:
    gs = _blowup_ground(cfg, seed)
    cls = gs.classification
    if not (cls.energy_positive or cls.concave_at_one):
        print("ground state is neither E > 0 nor S''(1) <= 0", file=sys.stderr)
        return EXIT_MEMBERSHIP
    rows = ex.run_instability_scan(gs, cfg["sigmas"], _run_opts(cfg))
    io.write_json(out / "instability.json", {"params": gs.params.to_dict(), "rows": [r.to_dict() for r in rows]})
    names = list(rows[0].to_dict()) if rows else []
    _write_csv(out / "instability.csv", [names] + [[r.to_dict()[k] for k in names] for r in rows])
    for r in rows:
        print(f"sigma={r.sigma:.3f} distance={r.distance:.4g} flag={r.flag} termination={r.termination}")
    return EXIT_OK


def cmd_sweep(cfg: dict, out: Path, seed: int, threads: int) -> int:
    sc = ex.SweepConfig.from_dict({"seed": seed, **cfg})
    rows = ex.sweep(sc, out / "sweep.jsonl", workers=threads)
    summary = {"rows": len(rows), "failed": sum(r["status"] != "ok" for r in rows)}
    if sc.kind == "groundstate":
        summary["energySign"] = ex.energy_sign_bracket(rows)
    io.write_json(out / "sweep_summary.json", summary)
    print(json.dumps(summary))
    return EXIT_OK


# --- parser ------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1; 2 is reserved for membership failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, top: bool = False) -> None:
    # subparsers must not overwrite values given before the subcommand
    kw = {} if top else {"default": argparse.SUPPRESS}
    p.add_argument("--config", type=Path, help="TOML file; the section named after the subcommand is read", **kw)
    p.add_argument("--out", type=Path, help=f"output directory (default ${io.OUT_ENV} or ./ptnls-out)", **kw)
    p.add_argument("--threads", type=int, help="FFT workers, or sweep processes", **kw)
    p.add_argument("--seed", type=int, help="unsigned 64-bit seed", **kw)
    p.add_argument("-v", "--verbose", action="store_true", **kw)


def _model_flags(p: argparse.ArgumentParser, omega_type=float) -> None:
    p.add_argument("--alpha", type=float)
    p.add_argument("--p", type=float)
    p.add_argument("--omega", type=omega_type)
    p.add_argument("--n", type=int)
    p.add_argument("--box", type=float, help="half extent times sqrt(omega)")
    p.add_argument("--tol", type=float, help="ground-state residual tolerance")


def _omega(text: str):
    return text if text == "auto" else float(text)


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="ptnls", description=__doc__)
    _common(top, top=True)
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eigen", help="bound state of the point interaction")
    _common(p)
    p.add_argument("--alpha", type=_floats)
    p.add_argument("--n", type=int)
    p.add_argument("--half-extent", dest="half_extent", type=float)

    p = sub.add_parser("groundstate", help="action ground state")
    _common(p)
    _model_flags(p)

    p = sub.add_parser("sigma-scan", help="action along the mass-preserving scaling")
    _common(p)
    _model_flags(p)
    p.add_argument("--sigma-min", dest="sigma_min", type=float)
    p.add_argument("--sigma-max", dest="sigma_max", type=float)
    p.add_argument("--samples", type=int)

    p = sub.add_parser("virial", help="variance second derivative against 8Q")
    _common(p)
    for name in ("alpha", "p", "amplitude", "mu", "dt", "t_end"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float)
    p.add_argument("--n", type=int)

    for name in ("blowup", "instability"):
        p = sub.add_parser(name, help="blow-up run" if name == "blowup" else "strong-instability scan")
        _common(p)
        _model_flags(p, _omega)
        if name == "blowup":
            p.add_argument("--sigma", type=float)
        else:
            p.add_argument("--sigmas", type=_floats)
        p.add_argument("--membership", choices=["U", "V"])
        p.add_argument("--phase-limit", dest="phase_limit", type=float)
        p.add_argument("--samples", type=int)
        p.add_argument("--t-end", dest="t_end", type=float)

    p = sub.add_parser("sweep", help="parameter sweep from the [sweep] config section")
    _common(p)
    return top


COMMANDS = {
    "eigen": (cmd_eigen, EIGEN),
    "groundstate": (cmd_groundstate, GROUND),
    "sigma-scan": (cmd_sigma_scan, SIGMA),
    "virial": (cmd_virial, VIRIAL),
    "blowup": (cmd_blowup, BLOWUP),
    "instability": (cmd_instability, INSTAB),
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    seed = args.seed if args.seed is not None else 0
    if not 0 <= seed < 2**64:
        raise SystemExit("--seed must be an unsigned 64-bit integer")
    seed32 = seed % 2**32
    threads = args.threads or 1
    if args.threads:
        set_threads(args.threads)
    config = {}
    if args.config:
        with open(args.config, "rb") as fh:
            config = tomllib.load(fh)
    out = args.out or io.default_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    section = config.get(args.command, {})
    try:
        if args.command == "sweep":
            return cmd_sweep(section, out, seed32, threads)
        func, defaults = COMMANDS[args.command]
        return func(_merge(args, section, defaults), out, seed32)
    except ex.MembershipError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_MEMBERSHIP
    except (ConvergenceError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
