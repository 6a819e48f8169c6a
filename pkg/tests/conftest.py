import numpy as np
import pytest

from rdpp.rng import make_rng

X3x2 = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture
def x3x2():
    return X3x2.copy()


def gaussian_matrix(seed, n=8, d=3, scale=0.5):
    return make_rng(seed, 99).standard_normal((n, d)) * scale
