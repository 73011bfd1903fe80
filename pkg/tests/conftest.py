import numpy as np
import pytest

from geotomo.grid import PolarGrid, TensorField


@pytest.fixture
def small_grid():
    return PolarGrid(8, 20, 20)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def smooth_field(grid, rng, rank=1, degree=3):
    """Random polynomial field of low degree (one polynomial per component)."""
    coef = rng.normal(size=(rank + 1, degree + 1, degree + 1))

    def func(x1, x2):
        comps = []
        for c in coef:
            val = np.zeros_like(x1)
            for i in range(degree + 1):
                for j in range(degree + 1 - i):
                    val = val + c[i, j] * x1**i * x2**j
            comps.append(val)
        return comps

    return TensorField.from_function(grid, func, rank)
