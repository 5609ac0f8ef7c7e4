import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def corner_volume():
    """4x3x2 grid where every voxel value encodes its own index."""
    from vtseg.volume import Volume

    i, j, k = np.indices((4, 3, 2))
    return Volume.from_array((100 * i + 10 * j + k).astype(np.int16))
