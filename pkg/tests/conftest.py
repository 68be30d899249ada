import numpy as np
import pytest

from nullrigidity.domain import DomainSpec
from nullrigidity.integrator import IntegratorControls
from nullrigidity.metric import ConformalBump, DiagonalPoly, Minkowski
from nullrigidity.shooting import make_initial_data

# filled by the acceptance module, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def disk():
    return DomainSpec.unit_ball(2)


@pytest.fixture
def mink():
    return Minkowski(2)


@pytest.fixture
def bump():
    return ConformalBump(0.1, [0.0, 0.0], 0.5)


@pytest.fixture
def controls():
    return IntegratorControls(step=1e-3)


def scaled_identity(eps, dim=2):
    """q' = -(1 - eps) I with the Minkowski time row."""
    return DiagonalPoly.constant([-(1.0 - eps)] * dim)


def chord(metric, y, direction):
    """Initial data at ``y`` whose spatial velocity points along ``direction``."""
    from nullrigidity.shooting import aim_covector

    return make_initial_data(metric, y, aim_covector(metric, y, direction))


@pytest.fixture
def diameter(mink):
    return chord(mink, [-1.0, 0.0], [1.0, 0.0])
