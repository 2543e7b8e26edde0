import numpy as np
import pytest

from sirtd.core import CompartmentState, EpidemicParams

N = 10_000
# agent-model truth of the simulated-data experiment; dispersions for model-generated fixtures
TRUTH = EpidemicParams(beta=0.3, omega=0.1, lambda_tweets=0.2, d_I=7.0, d_T=10.0,
                       phi_deaths=0.1, phi_tweets=0.1)


@pytest.fixture
def truth():
    return TRUTH


@pytest.fixture
def y0():
    return CompartmentState.initial(N, 10)


@pytest.fixture
def days():
    return np.arange(70.0)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
