import numpy as np
import pytest

from steerode.autodiff import Mlp
from steerode.sampling import RngStream


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_net():
    """Seeded net with state dim 2 and one hidden layer of 16."""
    return Mlp.init([3, 16, 2], RngStream(7).gen)


@pytest.fixture
def scalar_net():
    return Mlp.init([2, 8, 8, 1], RngStream(11).gen)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
