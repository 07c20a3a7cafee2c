import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from scbf.spectral_core import SpectralGrid

settings.register_profile(
    "scbf", max_examples=25, deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("scbf")


@pytest.fixture(scope="session")
def g2():
    return SpectralGrid(2, 16)


@pytest.fixture(scope="session")
def g3():
    return SpectralGrid(3, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_line():
    """Record one PASS/FAIL line per criterion; printed live and again in the terminal summary."""

    def emit(number: int, name: str, passed: bool, detail: str) -> None:
        line = f"[criterion {number:2d}] {'PASS' if passed else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
