import numpy as np
import pytest

from scenario_forge.lane_map import load_bundled_map


@pytest.fixture(scope="session")
def grid():
    return load_bundled_map("grid_3x3")


@pytest.fixture(scope="session")
def corridor():
    return load_bundled_map("corridor")


@pytest.fixture(scope="session")
def loop():
    return load_bundled_map("loop_merge")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
