import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def basis():
    from shuttlelab.potential import default_basis

    return default_basis()


@pytest.fixture(scope="session")
def fast_waveform(basis):
    """The default 120 um / 1.2 us transport sampled at 40 ns."""
    from shuttlelab.potential import make_transport_waveform

    return make_transport_waveform(basis, -60.0, 60.0, 1.2, 0.04, 2.2e6)


@pytest.fixture(scope="session")
def filtered_fast(basis, fast_waveform):
    from shuttlelab.filtering import FilterSpec, filtered_well_trajectory

    return filtered_well_trajectory(basis, fast_waveform, FilterSpec())
