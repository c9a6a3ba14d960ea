import numpy as np
import pytest
from hypothesis import settings

from lood.gp import Dataset, LeaveOneOutPair
from lood.io import ToyGeneratorSpec, generate_toy

settings.register_profile("repro", derandomize=True, database=None)
settings.load_profile("repro")


def sine_data(seed=0, n=10, noise_variance=0.01):
    return generate_toy(ToyGeneratorSpec(n=n, noise_variance=noise_variance, seed=seed))


def sine_pair(s, seed=0, n=10, noise_variance=0.01):
    data = sine_data(seed, n, noise_variance)
    return LeaveOneOutPair(data, [[float(s)]], [np.sin(float(s))])


def random_pair(rng, n=None, d=None, noise_variance=None):
    n = int(rng.integers(0, 8)) if n is None else n
    d = int(rng.integers(1, 4)) if d is None else d
    sigma2 = float(10 ** rng.uniform(-3, 0)) if noise_variance is None else noise_variance
    data = Dataset(rng.normal(size=(n, d)), rng.normal(size=n), sigma2)
    return LeaveOneOutPair(data, rng.normal(size=(1, d)), rng.normal(size=1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def two_cluster_data(seed=0, n=200, noise_variance=0.1):
    """Clusters at (+-2, 0) with std 0.5 and labels +-1."""
    rng = np.random.default_rng([seed, 100])
    side = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    x = np.column_stack([2.0 * side, np.zeros(n)]) + 0.5 * rng.standard_normal((n, 2))
    return Dataset(x, side, noise_variance)


def cluster_candidates(seed=0, count=100, flip=0.1):
    """Candidates around the cluster centres (std 1.0); a fraction get the wrong label."""
    rng = np.random.default_rng([seed, 200])
    side = np.where(rng.random(count) < 0.5, 1.0, -1.0)
    x = np.column_stack([2.0 * side, np.zeros(count)]) + rng.standard_normal((count, 2))
    labels = np.where(rng.random(count) < flip, -side, side)
    return x, labels


def group_design(seed=0, n=30, members=("data", "data", "outlier")):
    """2-D data (std 0.5, labels sin(x0)); members duplicate data points or sit at (3, 3)."""
    rng = np.random.default_rng([seed, 300])
    x = 0.5 * rng.standard_normal((n, 2))
    data = Dataset(x, np.sin(x[:, 0]), 0.1)
    group, i = [], 0
    for kind in members:
        if kind == "data":
            group.append(x[i])
            i += 1
        else:
            group.append(np.array([3.0, 3.0]))
    group = np.array(group)
    return data, group, np.sin(group[:, 0])


def domain_box(data, group):
    pts = np.vstack([data.features, group])
    return float(pts.min()), float(pts.max())


ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
