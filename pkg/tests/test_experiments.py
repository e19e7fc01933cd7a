import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ptnls import functionals as fn
from ptnls.evolution import EvolutionTrace
from ptnls.experiments import (
    BAND,
    BlowupRunOptions,
    Hypothesis,
    MembershipError,
    MembershipReport,
    RunManifest,
    SweepConfig,
    energy_sign_bracket,
    ground_state,
    membership_u,
    membership_v,
    run_blowup,
    run_instability_scan,
    second_differences,
    smallest_positive_energy_omega,
    sweep,
    trajectory_checks,
    _compare,
)
from ptnls.hamiltonian import ModelParams
from ptnls.io import read_jsonl
from ptnls.scaling import scale_radial


@pytest.fixture(scope="module")
def gs20():
    return ground_state(ModelParams(0.0, 5.0, -1, 20.0), 128, 8.0)


# --- membership logic ------------------------------------------------------------

rows = st.lists(
    st.builds(
        Hypothesis,
        name=st.text(max_size=4),
        value=st.floats(-1, 1),
        threshold=st.floats(-1, 1),
        relation=st.sampled_from(["<", "<=", ">", ">="]),
        passed=st.booleans(),
        boundary=st.booleans(),
        informational=st.booleans(),
    ),
    max_size=6,
)


@given(rows)
def test_overall_is_the_conjunction(rs):
    rep = MembershipReport("U", tuple(rs))
    assert rep.overall == all(r.passed for r in rs if not r.informational)
    assert set(rep.failed_rows()) == {r.name for r in rs if not r.informational and not r.passed}
    assert json.loads(json.dumps(rep.to_dict()))["overall"] == rep.overall


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_compare_relations(v, t):
    lt, le = _compare("x", v, t, "<", 1.0), _compare("x", v, t, "<=", 1.0)
    gt, ge = _compare("x", v, t, ">", 1.0), _compare("x", v, t, ">=", 1.0)
    if abs(v - t) > BAND:
        assert lt.passed == (v < t) == le.passed
        assert gt.passed == (v > t) == ge.passed
    else:
        assert lt.boundary and not lt.passed and le.passed
        assert not gt.passed and ge.passed


def test_compare_rejects_unknown_relation():
    with pytest.raises(ValueError):
        _compare("x", 0.0, 1.0, "!=", 1.0)


def test_ground_state_is_outside_both_sets(gs20):
    params = gs20.params
    u = membership_u(gs20.profile, params, gs20)
    v = membership_v(gs20.profile, params, gs20)
    assert not u.overall and not v.overall
    assert "Q < 0" in u.failed_rows() and "action < d(omega)" in u.failed_rows()


def test_scaled_ground_state_enters_u_and_v(gs20):
    params = gs20.params
    assert gs20.classification.energy_positive and gs20.classification.concave_at_one
    prof = scale_radial(gs20.profile, 1.2)
    assert membership_u(prof, params, gs20).overall
    assert membership_v(prof, params, gs20).overall


def test_contracted_state_fails_the_lp_row(gs20):
    v = membership_v(scale_radial(gs20.profile, 0.9), gs20.params, gs20)
    assert "Lp norm > ground-state Lp norm" in v.failed_rows()


def test_zero_state(gs20):
    zero = fn.FunctionalReport(*([0.0] * 11), 20.0)
    u = membership_u(zero, gs20.params, gs20)
    by_name = {r.name: r.passed for r in u.rows}
    assert by_name["action < d(omega)"] and by_name["energy >= 0"]
    assert not by_name["Q < 0"] and not u.overall


def test_ci_frequency_selection():
    assert smallest_positive_energy_omega(0.0, 5.0) == 20.0
    assert smallest_positive_energy_omega(0.0, 5.0, omegas=(2.0, 5.0)) is None


# --- blow-up plumbing -------------------------------------------------------------


def test_blowup_requires_membership(gs20):
    with pytest.raises(MembershipError) as info:
        run_blowup(gs20, 0.9)
    assert not info.value.report.overall
    sub = ground_state(ModelParams(0.0, 2.0, -1, 20.0), 64, 8.0)
    with pytest.raises(MembershipError):
        run_blowup(sub, 1.2)


def test_short_blowup_run(gs20):
    run = run_blowup(gs20, 1.2, BlowupRunOptions(t_end=2e-3, samples=10))
    d = run.to_dict()
    assert d["membership"]["overall"]
    assert run.checks.q_negative and run.checks.samples == len(run.trace.times)
    assert run.checks.concavity_budget < 0
    assert run.verdict.analytic_bound > 0
    assert run.initial_distance > 0
    assert json.loads(json.dumps(d, allow_nan=True))["digest"] == run.manifest.digest()


def test_scan_records_membership_failures(gs20):
    rows = run_instability_scan(gs20, sigmas=(0.9,), control=False)
    assert len(rows) == 1 and not rows[0].membership and rows[0].error


def test_second_differences_exact_on_quadratics():
    t = np.array([0.0, 0.1, 0.3, 0.35, 0.6])
    assert np.allclose(second_differences(t, 1 - 2 * t + 3 * t**2), 6.0)


def test_trajectory_checks():
    tr = EvolutionTrace(ModelParams(0.0, 5.0, -1, 1.0))
    t = np.linspace(0, 1, 6)
    for ti, vi in zip(t, 5 - 8 * t**2):
        tr.times.append(ti)
        tr.reports.append(fn.FunctionalReport(1, 0, 0, 0.5, 0, -1, vi, 0, 1, 0, 1, 1))
    c = trajectory_checks(tr, d_omega=1.0)
    # I''/8 = -2 against the budget 2 (0.5 - d)
    assert c.q_negative and c.variance_concave and c.concavity_ok
    assert c.concavity_budget == -1.0
    assert not trajectory_checks(tr, d_omega=2.0).concavity_ok


# --- manifests and sweeps ---------------------------------------------------------


def test_manifest_digest_ignores_times_and_paths():
    a = RunManifest("blowup", {"p": 5}, None, [1.2], {}, started=1.0, outputs=["x"])
    b = RunManifest("blowup", {"p": 5}, None, [1.2], {}, started=2.0, finished=3.0)
    c = RunManifest("blowup", {"p": 3}, None, [1.2], {})
    assert a.digest() == b.digest() != c.digest()


def test_sweep_rows_and_determinism(tmp_path):
    cfg = SweepConfig(kind="membership", alpha=[0.0, 0.1], p=[3.0, 5.0], omega=[10.0, 20.0], sigma=[1.2], n=64)
    rows = sweep(cfg, tmp_path / "a.jsonl")
    assert len(rows) == 8 and len(read_jsonl(tmp_path / "a.jsonl")) == 8
    assert all(r["status"] == "ok" for r in rows)
    assert [r["index"] for r in rows] == list(range(8))
    again = sweep(cfg, tmp_path / "b.jsonl", workers=2)
    strip = lambda rs: [{k: v for k, v in r.items() if k != "timestamp"} for r in rs]
    assert strip(read_jsonl(tmp_path / "a.jsonl")) == strip(read_jsonl(tmp_path / "b.jsonl"))


def test_sweep_records_errors(tmp_path):
    cfg = SweepConfig(kind="groundstate", alpha=[0.0], p=[5.0], omega=[0.5, 20.0], n=64)
    rows = sweep(cfg, tmp_path / "s.jsonl")
    assert rows[0]["status"] == "error" and "omega must exceed" in rows[0]["error"]
    assert rows[1]["status"] == "ok"


def test_sweep_config_validation():
    with pytest.raises(ValueError):
        SweepConfig.from_dict({"kind": "groundstate", "omegas": [1.0]})
    cfg = SweepConfig.from_dict({"alpha": 0.2, "omega": [1.0, 2.0]})
    assert cfg.alpha == [0.2] and len(cfg.points()) == 2


def test_energy_sign_bracket():
    mk = lambda om, e: {"status": "ok", "params": {"alpha": 0.0, "p": 5.0, "omega": om}, "groundState": {"report": {"energy": e}}}
    rows = [mk(20.0, 0.4), mk(5.0, -0.3), mk(10.0, -0.1), {"status": "error"}]
    out = energy_sign_bracket(rows)
    assert out["alpha=0.0,p=5.0"]["bracket"] == [10.0, 20.0]
    assert energy_sign_bracket([mk(1.0, 1.0)])["alpha=0.0,p=5.0"]["bracket"] is None


def test_large_sigma_leaves_u_but_stays_in_v(gs20):
    # E(phi^sigma) turns negative once the L^{p+1} term dominates; V has no energy row
    prof = scale_radial(gs20.profile, 1.5)
    assert membership_u(prof, gs20.params, gs20).failed_rows() == ["energy >= 0"]
    assert membership_v(prof, gs20.params, gs20).overall
