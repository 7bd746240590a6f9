import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from quasihess.model import load_model

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def a2():
    return load_model("a2").chart()


@pytest.fixture(scope="session")
def a3():
    return load_model("a3").chart()


@pytest.fixture(scope="session")
def aa():
    return load_model("aa").chart()


@pytest.fixture(scope="session")
def quadratic():
    return load_model("quadratic").chart()


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS, summary_line
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(summary_line(k))
