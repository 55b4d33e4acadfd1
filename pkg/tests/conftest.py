import numpy as np
import pytest

from ersi.elastics import MaterialParams
from ersi.forward import fibonacci_sphere, simulate
from ersi.source import build_grid, builtin_profile


@pytest.fixture(scope="session")
def params():
    return MaterialParams(2.0, 1.0, 4.0)


@pytest.fixture(scope="session")
def profile():
    return builtin_profile("paper3d")


@pytest.fixture(scope="session")
def small_data(params, profile):
    """Coarse noiseless dataset: h = 0.2 (1000 cells), 128 points, 40 samples."""
    grid = build_grid(profile.support, 0.2)
    obs = fibonacci_sphere(128, 2.0)
    return simulate(grid, profile, params, obs, 40, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    lines = request.config.__dict__.setdefault("_ersi_acceptance", [])

    def record(number, ok, detail):
        lines.append(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_ersi_acceptance")
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[-1])):
            terminalreporter.write_line(line)
