import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fnhydro.sampling import Domain

settings.register_profile("fnhydro", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("fnhydro")


@pytest.fixture
def pts2():
    return Domain.default(2).sample(100, 11)


@pytest.fixture
def pts3():
    return Domain.default(3).sample(100, 13)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
