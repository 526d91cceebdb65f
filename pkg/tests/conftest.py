import numpy as np
import pytest

from rkhscatter.scene import make_grid

# Lines collected by the acceptance module and echoed after the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def layer_grid():
    return make_grid(2, (17, 17), 70.0 / 17)
