import numpy as np
import pytest

from wickwz.kernels import make_haar_direction, uniform_partition


@pytest.fixture
def p4():
    return uniform_partition(4, 1.0)


@pytest.fixture
def haar4(p4):
    return make_haar_direction(p4)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def simpson_u(f, T=1.0, n=100_001):
    """Composite Simpson over ``[0, T]`` with ``n`` (odd) points."""
    from scipy.integrate import simpson

    u = np.linspace(0.0, T, n)
    return simpson(f(u), x=u)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
