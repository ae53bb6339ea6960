import numpy as np
import pytest


def random_spd(rng, d, ridge=0.1):
    a = rng.standard_normal((d, d))
    c = a @ a.T
    return c + ridge * np.trace(c) / d * np.eye(d)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
