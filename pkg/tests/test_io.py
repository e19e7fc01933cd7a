import json
import threading

import numpy as np
import pytest

from conftest import random_state
from ptnls import io
from ptnls.hamiltonian import ModelParams


def test_profile_roundtrip_and_layout(tmp_path, grid64):
    s = random_state(grid64, 1)
    data, side = io.write_profile(tmp_path / "sub" / "prof", s, {"note": "x"})
    meta = json.loads(side.read_text())
    assert meta["format"] == io.PROFILE_FORMAT and meta["dtype"] == "<c8" and meta["note"] == "x"
    assert meta["shape"] == [64, 64] and meta["data"] == "prof.c64"
    # raw little-endian complex64, C order, nothing else in the file
    assert data.stat().st_size == 64 * 64 * 8
    raw = np.frombuffer(data.read_bytes(), dtype="<f4").reshape(64, 64, 2)
    assert np.array_equal(raw[..., 0], s.phi_hat.real.astype("<f4"))
    assert np.array_equal(raw[..., 1], s.phi_hat.imag.astype("<f4"))
    t, _ = io.read_profile(tmp_path / "sub" / "prof")
    assert np.array_equal(t.phi_hat, s.phi_hat.astype(np.complex64))
    assert t.q == complex(s.q) and t.lam == s.lam and t.grid == s.grid


def test_profile_rejects_wrong_format(tmp_path, grid64):
    io.write_profile(tmp_path / "p", random_state(grid64, 2))
    meta = json.loads((tmp_path / "p.json").read_text())
    (tmp_path / "p.json").write_text(json.dumps({**meta, "format": "other"}))
    with pytest.raises(ValueError):
        io.read_profile(tmp_path / "p")
    (tmp_path / "p.json").write_text(json.dumps({**meta, "shape": [32, 32]}))
    with pytest.raises(ValueError):
        io.read_profile(tmp_path / "p")


def test_checkpoint_roundtrip(tmp_path, grid64):
    s = random_state(grid64, 3)
    params = ModelParams(0.1, 5.0, -1, 20.0)
    io.write_checkpoint(tmp_path / "ck", s, params, 0.25, 1e-4, 2**63 + 5)
    t, p, m = io.read_checkpoint(tmp_path / "ck")
    assert p == params and m["time"] == 0.25 and m["dt"] == 1e-4 and m["seed"] == 2**63 + 5
    assert np.allclose(t.phi_hat, s.phi_hat, atol=1e-6 * np.abs(s.phi_hat).max())


def test_jsonl_appender_serialises_writers(tmp_path):
    path = tmp_path / "rows.jsonl"
    with io.JsonlAppender(path) as app:
        threads = [threading.Thread(target=lambda k=k: [app.append({"k": k, "i": i}) for i in range(50)]) for k in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    rows = io.read_jsonl(path)
    assert len(rows) == 200
    assert sorted((r["k"], r["i"]) for r in rows) == [(k, i) for k in range(4) for i in range(50)]


def test_default_out_dir(monkeypatch, tmp_path):
    monkeypatch.setenv(io.OUT_ENV, str(tmp_path))
    assert io.default_out_dir() == tmp_path
    monkeypatch.delenv(io.OUT_ENV)
    assert str(io.default_out_dir()) == "ptnls-out"


def test_write_json_allows_nan(tmp_path):
    p = io.write_json(tmp_path / "a" / "b.json", {"x": float("nan")})
    assert "NaN" in p.read_text()
