import numpy as np
import pytest

from hillfate.model import ModelParams


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_states(rng, n, r_lo=0.3, r_hi=3.0, speed=3.0):
    """Phase points with radius in [r_lo, r_hi] and bounded velocity components."""
    r = rng.uniform(r_lo, r_hi, n)
    th = rng.uniform(0.0, 2.0 * np.pi, n)
    v = rng.uniform(-speed, speed, (n, 2))
    return np.column_stack([r * np.cos(th), r * np.sin(th), v])


@pytest.fixture(params=[1.0, 2.0, 3.0])
def params(request):
    return ModelParams(request.param)
