import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dampedplf import GaussianState, arctan_model, quadratic_model, range_model

settings.register_profile(
    "repo",
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("repo")


@pytest.fixture
def arctan_problem():
    return GaussianState([2.75], [[1.0]]), arctan_model(1e-4), np.array([0.0])


@pytest.fixture
def quadratic_problem():
    return GaussianState([1.0], [[1.0]]), quadratic_model(4.0), np.array([-4.0])


@pytest.fixture
def range_problem():
    return GaussianState([0.0, 0.0], np.eye(2)), range_model(), np.array([1.2, 0.7, 2.5])


def kalman(prior, H, c, R, y):
    """Closed-form linear-Gaussian posterior."""
    H = np.atleast_2d(H)
    S = H @ prior.cov @ H.T + R
    K = np.linalg.solve(S, H @ prior.cov).T
    return prior.mean + K @ (y - H @ prior.mean - c), prior.cov - K @ S @ K.T


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one verdict line per acceptance criterion."""
    return request.config.stash.setdefault(_ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
