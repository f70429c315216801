import numpy as np
import pytest

from lli_ions import msgate


@pytest.fixture(scope="session")
def calibrated_gate():
    return msgate.calibrate_gate(msgate.GateConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
