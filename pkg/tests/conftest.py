import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fdcorrect.constants import default_constants
from fdcorrect.dynamics import cr3bp_model, hfem_model
from fdcorrect.ephemeris import BicircularEphemeris, CircularEphemeris

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# periodic DRO (period 1.6) and quasi-DRO initial states, BRF
DRO_STATE = np.array([0.883749964899239, 0.0, 0.0, 0.0, 0.470425740470053, 0.0])
DRO_PERIOD = 1.6
QDRO_STATE = np.array([0.929817046666844, 0.0, 0.0, 0.01, 0.522717065584611, 0.0])


@pytest.fixture(scope="session")
def constants():
    return default_constants()


@pytest.fixture(scope="session")
def cr3bp(constants):
    return cr3bp_model(constants)


@pytest.fixture(scope="session")
def circular(constants):
    return CircularEphemeris(constants)


@pytest.fixture(scope="session")
def bicircular(constants):
    return BicircularEphemeris(constants)


@pytest.fixture(scope="session")
def hfem_circular(circular, constants):
    return hfem_model(circular, include_earth=True, include_sun=False, constants=constants)


@pytest.fixture(scope="session")
def hfem_bicircular(bicircular, constants):
    return hfem_model(bicircular, include_earth=True, include_sun=True, constants=constants)


# acceptance verdicts, repeated in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture
def verdict(capsys):
    def _report(criterion, ok, detail):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
