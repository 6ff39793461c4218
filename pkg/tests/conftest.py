import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE = {}


@pytest.fixture
def record_acceptance():
    """Record one acceptance outcome; the summary is printed at the end of the run."""
    def rec(number, name, passed, detail=""):
        line = f"ACCEPTANCE {number:2d} {'PASS' if passed else 'FAIL'}  {name}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return passed
    return rec


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[k])


@pytest.fixture(scope="session")
def fhn_cert():
    from roughlyap.lyapunov import fhn_certificate
    return fhn_certificate()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
