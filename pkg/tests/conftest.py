import numpy as np
import pytest

from fbsdexp import DiscreteLevyMeasure, FBSDEProblem


def zeros(*a):
    return np.zeros(np.broadcast(*a).shape)


@pytest.fixture
def atoms():
    return DiscreteLevyMeasure.from_atoms([0.5, -0.3], [2.0, 1.0])


def make_problem(**kw):
    base = dict(
        drift=lambda t, x, e: zeros(t, x, e),
        diffusion=lambda t, x: 0.3 + zeros(t, x),
        terminal=lambda x: np.asarray(x, dtype=float),
        driver=lambda t, x, y, z, u: zeros(t, x, y, z, u),
        horizon=1.0,
        initial_state=1.0,
    )
    base.update(kw)
    return FBSDEProblem(**base)


ACCEPTANCE_LINES = []


def report(criterion, ok, detail):
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
