import numpy as np
import pytest

from vsr_fdx.sim import FaultScenario, SimParams, simulate


@pytest.fixture(scope="session")
def params():
    return SimParams()


@pytest.fixture(scope="session")
def healthy_trace(params):
    return simulate(FaultScenario(), 0.5, params)


@pytest.fixture(scope="session")
def sap_trace(params):
    return simulate(FaultScenario.single(["SaP"], 0.2), 0.5, params)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
