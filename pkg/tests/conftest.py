import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
sys.path.insert(0, os.path.dirname(__file__))


def ou_series(n: int, seed: int) -> np.ndarray:
    """Discretized mean-reverting diffusion: x_t = e^-1 x_{t-1} + sqrt(1 - e^-2) eps_t."""
    rng = np.random.default_rng(seed)
    a = np.exp(-1.0)
    s = np.sqrt(1.0 - a * a)
    x = np.zeros(n)
    for t in range(1, n):
        x[t] = a * x[t - 1] + s * rng.normal()
    return x


def drift_pair(n: int, seed: int, amp: float = 2.5, slope: float = 0.8, feedback: float = 0.3):
    """Two series where x has a smooth trend in its mean and y follows x
    contemporaneously plus its own previous value."""
    rng = np.random.default_rng(seed)
    u = np.linspace(0.0, 1.0, n)
    x = amp * np.sin(2.0 * np.pi * u) + rng.normal(size=n)
    y = np.zeros(n)
    for t in range(n):
        y[t] = slope * x[t] + (feedback * y[t - 1] if t else 0.0) + rng.normal()
    return np.column_stack([x, y])


@pytest.fixture
def rng():
    return np.random.default_rng(0)
