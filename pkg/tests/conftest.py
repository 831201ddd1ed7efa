import numpy as np
import pytest

from jointts.data import MaskedSeries


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_series(rng, T, d, p_missing=0.0):
    values = rng.normal(size=(T, d))
    mask = (rng.random((T, d)) >= p_missing).astype(float)
    return MaskedSeries(values * mask, mask, [f"c{j}" for j in range(d)])
