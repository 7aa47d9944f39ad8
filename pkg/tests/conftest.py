import numpy as np
import pytest

from pmrskit import synth
from pmrskit.config import AnalysisConfig


@pytest.fixture
def protocol():
    return synth.AcquisitionProtocol()


@pytest.fixture
def noiseless_truth():
    return synth.GroundTruth(noise_sd=0.0, pi_shift_noise_sd=0.0)


@pytest.fixture
def default_config():
    return AnalysisConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(20240731)
