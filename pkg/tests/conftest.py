import numpy as np
import pytest

from otlimits.core import build_interval, build_torus_1d, dirac, signed


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: важкі перевірки прийняття (запускаються за замовчуванням)")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def torus16():
    return build_torus_1d(16)


@pytest.fixture
def torus64():
    return build_torus_1d(64)


@pytest.fixture
def interval5():
    return build_interval(5)


@pytest.fixture
def half_pair(torus64):
    """δ₀ − δ½ на колі з 64 вузлів."""
    return signed(dirac(torus64, 0), dirac(torus64, 32))
