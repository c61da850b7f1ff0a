import pytest

from chemostat_fpk.grid import Grid
from chemostat_fpk.model import haldane_params, monod_params


@pytest.fixture
def monod():
    return monod_params(0.005)


@pytest.fixture
def haldane():
    return haldane_params(0.01)


@pytest.fixture
def monod_grid():
    return Grid.chemostat(2.0, 0.06, 70, 70)


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for the acceptance summary, then assert it."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config._acceptance_lines.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
