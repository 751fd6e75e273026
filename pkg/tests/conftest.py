import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from asfs.data import SyntheticSpec, generate_synthetic, minmax_scale, partition

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    """d=8, 3 informative, 60 labeled / 120 unlabeled / 80 test."""
    spec = SyntheticSpec(n_samples=260, n_features=8, n_informative=3, group_size=5, seed=3)
    return minmax_scale(partition(generate_synthetic(spec), 60, 120, 80, seed=3))
