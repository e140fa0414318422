from __future__ import annotations

import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "boxmap",
    deadline=None,
    max_examples=int(os.environ.get("BOXMAP_HYPOTHESIS_EXAMPLES", "40")),
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile("boxmap")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
