import numpy as np
import pytest

from convbandits import SyntheticConfig, gen_synthetic

FIXTURE_TAGS = "tests/data/lastfm_fixture.dat"


@pytest.fixture(scope="session")
def small_env():
    return gen_synthetic(SyntheticConfig(
        num_arms=60, num_keyterms=25, d=6, num_users=4,
        noise_sigma=0.1, pool_size=12, seed=7,
    ))


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


def unit_rows(mat):
    return mat / np.linalg.norm(mat, axis=1, keepdims=True)
