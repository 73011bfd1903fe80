import math

import numpy as np
import pytest

from geotomo.forward import (BoundaryNonzero, EuclideanRayTransform, GeodesicRayTransform,
                             forward_operator, potential_field_gradient)
from geotomo.geometry import builtin_medium
from geotomo.grid import PolarGrid, TensorField

from conftest import smooth_field


def const_field(grid, c=(0.7, -0.4)):
    return TensorField(grid, 1, np.broadcast_to(np.array(c), (grid.R, grid.P, 2)).copy())


def diameter(data):
    # mu_P = phi_Q = 2 pi: the ray leaves at (1, 0) in direction (1, 0)
    return data.values[-1, -1]


def test_constant_field_on_diameter(small_grid):
    g = EuclideanRayTransform(small_grid, 0.0)(const_field(small_grid))
    assert diameter(g) == pytest.approx(2 * 0.7, abs=1e-12)


def test_f1_on_diameter_vanishes(small_grid):
    f = TensorField.from_function(small_grid, lambda a, b: (a + b, a - b))
    assert abs(diameter(EuclideanRayTransform(small_grid, 0.0)(f))) < 1e-12


def test_attenuated_constant_on_diameter(small_grid):
    g = EuclideanRayTransform(small_grid, 0.1, T=200)(const_field(small_grid))
    assert diameter(g) == pytest.approx(0.7 * (1 - math.exp(-0.2)) / 0.1, abs=1e-4)


def test_incoming_entries_are_zero(small_grid, rng):
    g = EuclideanRayTransform(small_grid, 0.1)(smooth_field(small_grid, rng))
    assert np.all(g.values[~small_grid.outgoing_mask()] == 0)


def test_zero_field_gives_zero_data(small_grid):
    for op in (EuclideanRayTransform(small_grid), GeodesicRayTransform(small_grid, builtin_medium("paper-slow"))):
        assert not np.any(op(TensorField.zeros(small_grid)).values)


def test_linearity(small_grid, rng):
    op = forward_operator(small_grid, "paper-slow", dtau=0.02)
    a, b = smooth_field(small_grid, rng), smooth_field(small_grid, rng)
    lhs = op(a * 2.0 + b * -3.0).values
    rhs = 2.0 * op(a).values - 3.0 * op(b).values
    assert np.allclose(lhs, rhs, atol=1e-12 * np.abs(rhs).max())


def test_attenuation_shrinks_positive_integrands(small_grid):
    # a field parallel to every ray direction is impossible, so use the
    # diameter entry of a constant field, where the integrand is positive
    values = [diameter(EuclideanRayTransform(small_grid, a)(const_field(small_grid))) for a in (0, 0.1, 0.3)]
    assert values[0] > values[1] > values[2] > 0


def test_geodesic_reduces_to_euclidean(small_grid, rng):
    f = smooth_field(small_grid, rng)
    e = EuclideanRayTransform(small_grid, 0.0, T=200)(f).values
    g = GeodesicRayTransform(small_grid, builtin_medium("euclid"), dtau=0.01)(f).values
    assert np.abs(e - g).max() <= 1e-3 * max(1.0, np.abs(e).max())


def test_forward_operator_dispatch(small_grid):
    assert isinstance(forward_operator(small_grid, "euclid", 0.1), EuclideanRayTransform)
    assert isinstance(forward_operator(small_grid, "paper-mild", 0.1, dtau=0.05), GeodesicRayTransform)


def test_sample_average_quadrature_option(small_grid):
    op = EuclideanRayTransform(small_grid, 0.0, T=200, quadrature="average")
    # the sample average omits the chord length
    assert diameter(op(const_field(small_grid))) == pytest.approx(0.7, abs=1e-12)
    with pytest.raises(ValueError):
        EuclideanRayTransform(small_grid, quadrature="simpson")
    with pytest.raises(ValueError):
        EuclideanRayTransform(small_grid, T=1)


def test_potential_gradients(small_grid):
    x = small_grid.nodes()
    f = potential_field_gradient(lambda a, b: 1 - a * a - b * b, small_grid)
    assert np.allclose(f.values, -2 * x, atol=1e-8)
    z = potential_field_gradient(lambda a, b: 0 * a, small_grid)
    assert not np.any(z.values)
    f = potential_field_gradient(lambda a, b: (1 - a * a - b * b) * a, small_grid)
    a, b = x[..., 0], x[..., 1]
    assert np.allclose(f.values[..., 0], 1 - 3 * a * a - b * b, atol=1e-8)
    assert np.allclose(f.values[..., 1], -2 * a * b, atol=1e-8)
    with pytest.raises(BoundaryNonzero):
        potential_field_gradient(lambda a, b: a + 2.0, small_grid)


def test_potential_field_in_kernel_on_fine_grid():
    grid = PolarGrid(34, 106, 106)
    op = EuclideanRayTransform(grid, 0.0, T=400)
    f = potential_field_gradient(lambda a, b: 1 - a * a - b * b, grid)
    assert np.abs(op(f).values).max() < 1e-3
