import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pixspec.datacube import SynthSpec, WavelengthGrid, synth_cube

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def grid8():
    return WavelengthGrid.uniform(450.0, 940.0, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_cube():
    return synth_cube(SynthSpec(dims=(24, 24, 8), spectral_rank=3, spatial_correlation_length=4.0,
                                seed=5))


@pytest.fixture(scope="session")
def default_cube():
    return synth_cube(SynthSpec())
