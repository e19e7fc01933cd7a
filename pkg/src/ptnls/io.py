"""File formats: raw complex64 arrays with JSON sidecars, checkpoints, JSONL.

Layouts are documented in ``docs/formats``.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path

import numpy as np

from .hamiltonian import ModelParams, SingularState
from .numerics import GridSpec

PROFILE_FORMAT = "ptnls-profile/1"
CHECKPOINT_FORMAT = "ptnls-checkpoint/1"
DTYPE = "<c8"
OUT_ENV = "PTNLS_OUT"


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "ptnls-out"))


def _write_c64(path: Path, arr: np.ndarray) -> None:
    np.ascontiguousarray(arr, dtype=np.dtype(DTYPE)).tofile(path)


def _read_c64(path: Path, shape) -> np.ndarray:
    data = np.fromfile(path, dtype=np.dtype(DTYPE))
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: expected {int(np.prod(shape))} complex64 values, found {data.size}")
    return data.reshape(shape).astype(complex)


def _state_meta(s: SingularState) -> dict:
    return {
        "dtype": DTYPE,
        "shape": [s.grid.n, s.grid.n],
        "order": "C",
        "layout": "phi_hat in FFT order",
        "grid": {"n": s.grid.n, "half_extent": s.grid.half_extent},
        "lam": s.lam,
        "q": [float(np.real(s.q)), float(np.imag(s.q))],
    }


def _state_from_meta(meta: dict, phi_hat: np.ndarray) -> SingularState:
    grid = GridSpec(int(meta["grid"]["n"]), float(meta["grid"]["half_extent"]))
    q = complex(meta["q"][0], meta["q"][1])
    return SingularState(phi_hat, q, float(meta["lam"]), grid)


def _paths(stem) -> tuple[Path, Path]:
    # appended, not with_suffix: stems such as "eigen_alpha+0.3000" contain dots
    stem = Path(stem)
    return stem.parent / f"{stem.name}.c64", stem.parent / f"{stem.name}.json"


def write_profile(stem, s: SingularState, extra: dict | None = None) -> tuple[Path, Path]:
    """``<stem>.c64`` (``phi_hat``) and ``<stem>.json`` sidecar."""
    data, side = _paths(stem)
    data.parent.mkdir(parents=True, exist_ok=True)
    _write_c64(data, s.phi_hat)
    meta = {"format": PROFILE_FORMAT, "data": data.name, **_state_meta(s), **(extra or {})}
    side.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return data, side


def read_profile(stem) -> tuple[SingularState, dict]:
    data, side = _paths(stem)
    meta = json.loads(side.read_text())
    if meta.get("format") != PROFILE_FORMAT:
        raise ValueError(f"not a profile sidecar: {meta.get('format')!r}")
    phi_hat = _read_c64(data.parent / meta["data"], meta["shape"])
    return _state_from_meta(meta, phi_hat), meta


def write_checkpoint(directory, s: SingularState, params: ModelParams, time: float, dt: float, seed: int) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_c64(directory / "phi_hat.c64", s.phi_hat)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "data": "phi_hat.c64",
        "params": params.to_dict(),
        "time": time,
        "dt": dt,
        "seed": seed,
        **_state_meta(s),
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def read_checkpoint(directory) -> tuple[SingularState, ModelParams, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a checkpoint manifest: {manifest.get('format')!r}")
    phi_hat = _read_c64(directory / manifest["data"], manifest["shape"])
    params = ModelParams(**manifest["params"])
    return _state_from_meta(manifest, phi_hat), params, manifest


class JsonlAppender:
    """Serialised line appends; each row is flushed as soon as it is written."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._fh = open(self.path, "w")

    def append(self, row: dict) -> None:
        line = json.dumps(row, sort_keys=True, allow_nan=True)
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True))
    return path
