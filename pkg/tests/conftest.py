import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bvlab.geometry import make_disk

settings.register_profile("bvlab", deadline=None, derandomize=True, print_blob=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("bvlab")


@pytest.fixture(scope="session")
def disk():
    return make_disk(1.0, 24, 96)


@pytest.fixture(scope="session")
def fine_disk():
    return make_disk(1.0, 48, 192)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(name, ok, detail)`` prints and stores PASS/FAIL."""

    def emit(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} {name} {detail}".rstrip()
        print(line)
        _CRITERIA.append(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
