import numpy as np
import pytest

from zcmes.environment import ZcmesEnv, default_config


@pytest.fixture(scope="session")
def cfg1():
    return default_config(1)


@pytest.fixture(scope="session")
def cfg4():
    return default_config(4)


@pytest.fixture
def env1(cfg1):
    return ZcmesEnv(cfg1)


@pytest.fixture
def env4(cfg4):
    return ZcmesEnv(cfg4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


from hypothesis import settings  # noqa: E402

settings.register_profile("repo", derandomize=True, deadline=None)
settings.load_profile("repo")
