import sys
import numpy as np
import pytest

from chaosbound.covariance import fractional_covariance, mollified_covariance
from chaosbound.scaling import bump


def random_psd(rng, K, jitter=0.05):
    A = rng.normal(size=(K, K))
    return A @ A.T / K + jitter * np.eye(K)


def random_positive_psd(rng, K):
    """PSD matrix with strictly positive entries (positive correlations)."""
    A = np.abs(rng.normal(size=(K, K + 2)))
    return A @ A.T / (K + 2) + 0.05 * np.eye(K)


@pytest.fixture(scope="session")
def frac_half():
    return fractional_covariance(0.5)


@pytest.fixture(scope="session")
def moll_eighth(frac_half):
    """Fractional alpha=1/2 model mollified by the bump at eps=1/8."""
    return mollified_covariance(frac_half, bump(), 0.125)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
