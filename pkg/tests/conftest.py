import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from multitask_ggm import TaskSuite  # noqa: E402
from multitask_ggm._backend import available  # noqa: E402


def random_suite(rng, n, k, counts=None, samples=None):
    """Sample covariances of Gaussian data with a random dense precision."""
    samples = samples or max(2 * n, 10)
    covs = []
    for _ in range(k):
        a = rng.standard_normal((n, n))
        prec = a @ a.T / n + 0.5 * np.eye(n)
        x = rng.multivariate_normal(np.zeros(n), np.linalg.inv(prec),
                                    size=samples)
        covs.append(x.T @ x / samples)
    if counts is None:
        counts = rng.integers(5, 50, size=k).astype(float)
    return TaskSuite(np.stack(covs), np.asarray(counts, dtype=float))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(params=available())
def backend(request):
    return request.param


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
