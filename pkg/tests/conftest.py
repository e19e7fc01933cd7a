import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ptnls.hamiltonian import SingularState
from ptnls.numerics import GridSpec, fft

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid64():
    return GridSpec(64, 10.0)


@pytest.fixture(scope="session")
def grid128():
    return GridSpec(128, 12.0)


def random_state(grid: GridSpec, seed: int, lam: float = 1.0, width: float = 1.5, charge: bool = True) -> SingularState:
    """Smooth random regular part (Gaussian envelope times a low-order polynomial) plus a charge."""
    rng = np.random.default_rng(seed)
    x, y = grid.xy
    c = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    poly = c[0] + c[1] * x + c[2] * y + c[3] * x * y + c[4] * x * x + c[5] * y * y
    x0 = rng.uniform(-1, 1, 2)
    phi = poly * np.exp(-((x - x0[0]) ** 2 + (y - x0[1]) ** 2) / (2 * width**2))
    q = complex(rng.standard_normal(), rng.standard_normal()) if charge else 0j
    return SingularState(fft(phi, grid), q, lam, grid)


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


__all__ = ["ACCEPTANCE", "random_state", "rel", "math"]


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
