import numpy as np
import pytest

from pgdenoise.kernels import available_backends
from pgdenoise.rng import RngState
from pgdenoise.textures import synthetic_texture

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(params=sorted(available_backends()))
def backend(request):
    """Each available kernel module in turn."""
    return available_backends()[request.param]


@pytest.fixture
def texture():
    return synthetic_texture(64, RngState(123))


@pytest.fixture
def acceptance_report():
    def record(number: int, passed: bool, detail: str) -> None:
        line = f"acceptance {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

