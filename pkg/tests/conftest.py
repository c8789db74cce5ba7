import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "krmcf", deadline=None, max_examples=25, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "krmcf"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def observed(e_coarse, e_fine, ratio=2.0):
    return np.log(e_coarse / e_fine) / np.log(ratio)
