import pytest

from reflectdiff import drift as drifts
from reflectdiff.montecarlo import simulate_reflected


@pytest.fixture(scope="session")
def bangbang_bundle():
    """10^6 reflected paths attracted to y = 1 (beta = 1) from 0.8 up to t = 1."""
    return simulate_reflected(drifts.bang_bang(1.0, 1.0), 0.8, 1.0, 1e-3, 1_000_000, seed=20240611)


@pytest.fixture(scope="session")
def free_bundle():
    """10^6 reflected Brownian paths from 0.5 up to t = 1."""
    return simulate_reflected(drifts.constant(0.0), 0.5, 1.0, 1e-3, 1_000_000, seed=31337)
