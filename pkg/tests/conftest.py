import numpy as np
import pytest
from hypothesis import settings

from biphoton.grid import make_grid

settings.register_profile("ci", max_examples=25, deadline=None)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_field(rng, n):
    return rng.normal(size=(n,) * 4) + 1j * rng.normal(size=(n,) * 4)


@pytest.fixture
def grid8():
    return make_grid(8, 80e-6)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
