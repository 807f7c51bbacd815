import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ci", max_examples=40, derandomize=True, deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_trackset():
    """Small deterministic synthetic trackset shared across tests."""
    from pedcross.synthetic import SyntheticConfig, generate_tracks

    return generate_tracks(SyntheticConfig(n_tracks=40), seed=9)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small generated dataset on disk (tracks + frames + meta)."""
    from pedcross.synthetic import SyntheticConfig, generate_dataset

    root = tmp_path_factory.mktemp("dataset")
    config = SyntheticConfig(n_tracks=40)
    trackset = generate_dataset(config, 9, root, stride=5)
    return root, trackset, config
