import numpy as np
import pytest
from hypothesis import settings

from magnonmem import NoiseParams, ProtocolTiming

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

# Background mean fitted once (calibrate_background) so the expected mean
# six-state fidelity is 0.93; test_memory checks that the fit reproduces it.
CALIBRATED_MU_BG = 0.07446220123747374


@pytest.fixture
def timing():
    return ProtocolTiming()


@pytest.fixture
def calibrated():
    return NoiseParams(T2=1e-4, mu_bg=CALIBRATED_MU_BG)


@pytest.fixture
def noiseless():
    return NoiseParams.noiseless()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
