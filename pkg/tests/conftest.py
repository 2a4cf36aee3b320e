import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bsscfs import BssModel, ConstantSigma, ExpOUSigma, GammaKernel, TabulatedKernel

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def gamma_expou():
    return BssModel(0.0, GammaKernel(0.25, 1.0), ExpOUSigma(1.0, 0.0, 0.5))


@pytest.fixture(scope="session")
def gamma_const():
    return BssModel(0.0, GammaKernel(0.25, 1.0), ConstantSigma(1.0))


@pytest.fixture(scope="session")
def brownian():
    """``g = 1`` on (0, 1], ``sigma = 1`` from 0: ``Z`` is a standard Brownian motion on [0, 1]."""
    return BssModel(0.0, TabulatedKernel((0.0, 1.0), (1.0, 1.0)), ConstantSigma(1.0, active_from=0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
