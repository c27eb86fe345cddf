import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from signorini_lab import exact
from signorini_lab.grid import make_grid

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def g129():
    return make_grid(2, 129)


@pytest.fixture(scope="session")
def g257():
    return make_grid(2, 257)


@pytest.fixture(scope="session")
def reg257(g257):
    return exact.regular32().on(g257)


@pytest.fixture(scope="session")
def q257(g257):
    return exact.qpoly(2, [1.0]).on(g257)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
