import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", deadline=None, max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def scalar_cell():
    """1-D Identity cell f(z) = 0.5 z + x."""
    from streamdeq.cell import EquilibriumCell

    return EquilibriumCell(np.array([[0.5]]), np.array([[1.0]]), np.array([0.0]), "identity", 0.9)
