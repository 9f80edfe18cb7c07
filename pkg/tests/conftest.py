import numpy as np
import pytest

from gmclab.kernel import build_mollifier


@pytest.fixture(scope="session")
def k1():
    return build_mollifier(1)


@pytest.fixture(scope="session")
def k3():
    return build_mollifier(3)


def bump(x):
    """Unnormalized bump profile evaluated straight from the formula."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    m = np.abs(x) < 0.5
    out[m] = np.exp(-1.0 / (1.0 - (2 * x[m]) ** 2))
    return out
