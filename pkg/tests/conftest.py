import numpy as np
import pytest

from lgesynthlab import phantom


def low_noise_spec(**overrides) -> phantom.PhantomSpec:
    """Phantom spec with barely-there noise, for tests where texture would
    only obscure the geometry under test."""
    intensities = dict(phantom.DEFAULT_INTENSITIES)
    intensities["noise_sigma"] = 0.005
    kwargs = {"intensity_model": intensities}
    kwargs.update(overrides)
    return phantom.PhantomSpec(**kwargs)


@pytest.fixture(scope="session")
def default_spec():
    return phantom.PhantomSpec()


@pytest.fixture(scope="session")
def clean_spec():
    return low_noise_spec()


@pytest.fixture(scope="session")
def sample_bank(default_spec):
    """Forty deterministic phantoms shared across tests."""
    return [phantom.generate_phantom(default_spec, f"bank_p{i:03d}", seed=i)
            for i in range(40)]


@pytest.fixture(scope="session")
def positive_bank(default_spec):
    return [phantom.generate_phantom(default_spec, f"pos_p{i:03d}", seed=i,
                                     force_positive=True)
            for i in range(20)]


def annulus_mask(size=64, center=(32.0, 32.0), r_in=9.0, r_out=15.0):
    yy, xx = np.mgrid[0:size, 0:size]
    r = np.hypot(yy - center[0], xx - center[1])
    return (r >= r_in) & (r < r_out)
