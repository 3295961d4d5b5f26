import numpy as np
import pytest
from hypothesis import settings

from mtsic.tensor import precision

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")

TOL64 = 1e-5
TOL32 = 1e-3


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def f64():
    with precision(np.float64):
        yield


def separated(rng, shape, lo=-1.0, hi=1.0, gap=0.05):
    """Random values whose pairwise gaps exceed ``gap`` (keeps max/abs kinks away from the stencil)."""
    n = int(np.prod(shape))
    grid = np.linspace(lo, hi, n) if n > 1 else np.array([lo])
    if n > 1 and (hi - lo) / (n - 1) < gap:
        raise ValueError("range too small for requested separation")
    return rng.permutation(grid).reshape(shape)


def pytest_terminal_summary(terminalreporter):
    import sys

    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[n])
