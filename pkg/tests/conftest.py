import numpy as np
import pytest

from wtasoftmax import WtaParams, gen_permutations


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def small_params():
    """A cheap banded configuration for unit tests."""
    return WtaParams(dim=16, window_size=4, n_perms=40, n_bands=20, seed=7)


@pytest.fixture
def small_perms(small_params):
    return gen_permutations(small_params)
