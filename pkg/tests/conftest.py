import numpy as np
import pytest

from quadgroup.data import Dataset


def random_dataset(rng, n, p, k=3, amp=1.0, noise=1.0, rho=0.0):
    """Gaussian design with AR(1)-type correlation and k leading active coefficients."""
    idx = np.arange(p)
    cov = rho ** np.abs(idx[:, None] - idx[None, :])
    x = rng.standard_normal((n, p)) @ np.linalg.cholesky(cov).T
    beta = np.zeros(p)
    beta[:k] = amp
    y = x @ beta + noise * rng.standard_normal(n)
    return Dataset(x, y), beta


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
