import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _quiet_numpy():
    with np.errstate(over="ignore", under="ignore"):
        yield


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one verdict line per acceptance criterion for the terminal summary."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(number, title, ok, detail, elapsed, budget):
        fast = elapsed < budget
        verdict = "PASS" if ok and fast else "FAIL"
        line = (f"criterion {number:2d} {verdict}  {title}: {detail}; "
                f"{elapsed:.1f}s (budget {budget:g}s)")
        lines.append(line)
        print(line)
        return ok and fast

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = sorted(config.stash[_ACCEPTANCE])
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
