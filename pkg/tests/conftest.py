from importlib import resources

import numpy as np
import pytest

from mnsga_nas.search_space import default_space


@pytest.fixture(scope="session")
def space():
    return default_space()


@pytest.fixture(scope="session")
def ref_arch_text():
    return resources.files("mnsga_nas").joinpath("data/mnsga_v3.txt").read_text()


@pytest.fixture(scope="session")
def toy_space():
    """2304-genome truncation used for exhaustive-enumeration checks."""
    return default_space(
        max_slots=(2, 2, 1, 1, 1),
        ops=("GBe1", "GBe4", "Identity"),
        channels=[(24, 32), (40, 48), (56, 96), (128,), (152,)],
    )


@pytest.fixture(scope="session")
def small_space():
    """Narrow, shallow space that keeps supernet tensors tiny."""
    return default_space(
        max_slots=(2, 3, 2, 3, 2),
        channels=[(4, 8), (8, 12), (12, 16), (16, 20, 24), (24, 32)],
        input_resolution=64,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
