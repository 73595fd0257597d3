import numpy as np
import pytest


def unit_rows(rng, b, d):
    z = rng.normal(size=(b, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
