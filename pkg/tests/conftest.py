import numpy as np
import pytest

from molarkit import set_backend


@pytest.fixture(params=["numba", "numpy"])
def kernel_backend(request):
    """Run the test once per kernel backend."""
    previous = set_backend(request.param)
    yield request.param
    set_backend(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line; all lines are repeated in the terminal summary."""

    def _report(label, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] {label}: {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
