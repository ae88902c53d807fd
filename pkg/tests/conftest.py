import numpy as np
import pytest

from wmsync import datasets
from wmsync.layout import generate_layout


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def layout():
    return generate_layout(7, 8, 8)


@pytest.fixture(scope="session")
def test_images():
    """Four natural 512x512 test canvases."""
    return datasets.builtin_corpus("test", 4, seed=0)


@pytest.fixture(scope="session")
def photo(test_images):
    return test_images[0]
