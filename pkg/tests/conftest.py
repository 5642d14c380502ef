import numpy as np
import pytest

from mfdk.benchmark import build_spring_mass, initial_controller, minimal_gamma

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record a one-line verdict for an acceptance criterion."""

    def record(number, passed, detail):
        _CRITERIA[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def plant():
    return build_spring_mass()


@pytest.fixture(scope="session")
def lqr_gain_bench(plant):
    return initial_controller(plant)


@pytest.fixture(scope="session")
def gamma_star(plant):
    return minimal_gamma(plant, np.zeros(plant.mv))[0]
