import sys

import numpy as np
import pytest

from crvq.layer import CalibrationSet


def heavy_tailed_layer(seed, M=128, N=128, O=128, sigma=1.0):
    """Gaussian weights with log-normal column scales, Gaussian activations."""
    rng = np.random.default_rng(1000 + seed)
    scales = rng.lognormal(0.0, sigma, N)
    W = (rng.standard_normal((M, N)) * scales).astype(np.float32)
    X = rng.standard_normal((N, O))
    return W, CalibrationSet(X=X)


def gaussian_layer(seed, M=128, N=128, O=128):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((M, N)).astype(np.float32)
    X = rng.standard_normal((N, O))
    return W, CalibrationSet(X=X)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
