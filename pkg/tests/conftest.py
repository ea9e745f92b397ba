import numpy as np
import pytest

from tdcc.simulate import default_truth_model, make_rng, simulate_paths
from tdcc.tensor import Dims


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def small_sim():
    """One simulated sample at tiny dims, shared by estimation-level tests."""
    dims = Dims((2, 3))
    truth = default_truth_model(dims)
    return truth, simulate_paths(truth, 400, 200, make_rng(101))


def random_correlation(rng, n):
    a = rng.normal(size=(n, n + 3))
    s = a @ a.T + 0.05 * np.eye(n)
    d = 1.0 / np.sqrt(np.diag(s))
    return s * np.outer(d, d)


def random_spd(rng, n, jitter=0.1):
    a = rng.normal(size=(n, n + 2))
    return a @ a.T / (n + 2) + jitter * np.eye(n)
