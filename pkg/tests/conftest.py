import numpy as np
import pytest

import brwlab


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    """Pay the one-time JIT cost before any timed test runs."""
    brwlab.warmup_kernels()
    brwlab.set_threads(2)


@pytest.fixture()
def rng():
    return np.random.default_rng(0xB5)
