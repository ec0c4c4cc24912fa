import numpy as np
import pytest

SEEDS = list(range(10))


def pytest_addoption(parser):
    parser.addoption("--extended", action="store_true", default=False,
                     help="run the long 64x64 reproduction checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--extended"):
        return
    skip = pytest.mark.skip(reason="needs --extended")
    for item in items:
        if "extended" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(params=SEEDS)
def seed(request):
    return request.param


@pytest.fixture
def rng(seed):
    return np.random.default_rng(seed)
