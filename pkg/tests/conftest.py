import numpy as np
import pytest

from recycle_nls.models import Dataset, RegressionModel


def _lin_f(x, th):
    return th[..., 0, None] * x


def _lin_g(x, th):
    return np.broadcast_to(np.asarray(x, float), th.shape[:-1] + np.shape(x)[-1:])[..., None]


def _lin_h(x, th):
    return np.zeros(th.shape[:-1] + np.shape(x)[-1:] + (1, 1))


LINEAR = RegressionModel("linear-test", 1, _lin_f, _lin_g, _lin_h, start=[1.0])


@pytest.fixture
def linear():
    return LINEAR


@pytest.fixture
def model1_data():
    """Noisy Model I sample, n=150, fixed seed."""
    rng = np.random.default_rng(2024)
    x = rng.uniform(0, 10, 150)
    y = 2.0 * x * np.exp(-0.04 * x) + rng.normal(0, 0.25, 150)
    return Dataset(x, y)
