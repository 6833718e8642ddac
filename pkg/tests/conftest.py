import time

import pytest
from hypothesis import settings

# fixed example sequence so the suite is reproducible run to run
settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")

_LINES = {}


class Criterion:
    """Times a block and records one PASS/FAIL line for the terminal summary."""

    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    @property
    def elapsed(self):
        return time.perf_counter() - self.start

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        line = f"criterion {self.number:2d} {status}  {self.title}: {self.detail} [{self.elapsed:.2f} s]"
        _LINES[self.number] = line
        print(line)
        return False


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_LINES):
            terminalreporter.write_line(_LINES[n])
