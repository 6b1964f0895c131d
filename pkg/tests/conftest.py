import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from skdv2.field import Field, Grid

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


@pytest.fixture
def grid():
    return Grid(128, 40.0)


def random_band_limited(grid, rng, band=None, decay=6.0):
    """Random smooth real field with wavenumbers ``1..band``."""
    band = band or grid.n // 4
    hat = np.zeros(grid.nk, dtype=complex)
    j = np.arange(1, band + 1)
    hat[1: band + 1] = (rng.standard_normal(band) + 1j * rng.standard_normal(band)) * np.exp(-j / decay)
    hat *= grid.n / 4
    return Field(grid, np.fft.irfft(hat, grid.n))


def gaussian(grid, amp=0.5, width=2.0, center=0.0):
    return Field(grid, amp * np.exp(-(((grid.x - center) / width) ** 2)))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
