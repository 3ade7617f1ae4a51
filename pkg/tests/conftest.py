# File: tests/conftest.py

import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from microgeometry.quadrature import build_rule  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run acceptance-scale tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_rule():
    return build_rule(8, 16)


@pytest.fixture(scope="session")
def medium_rule():
    return build_rule(16, 32)


@pytest.fixture
def random_units(rng):
    """Random unit vectors (n, 3), upper hemisphere of +Z unless told otherwise."""

    def draw(n, upper=True):
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        if upper:
            v[:, 2] = np.abs(v[:, 2])
        return v

    return draw
