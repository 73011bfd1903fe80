import numpy as np
import pytest
import scipy.sparse.linalg as spla

from geotomo.adjoint import EuclideanBackprojection
from geotomo.experiments import phantom_field
from geotomo.forward import EuclideanRayTransform
from geotomo.grid import BoundaryData, PolarGrid, TensorField
from geotomo.recon import (DivergenceDetected, ReconConfig, ZeroField, add_relative_uniform_noise,
                           landweber, relative_l2_error)

GRID = PolarGrid(6, 20, 20)


@pytest.fixture(scope="module")
def ops():
    return EuclideanRayTransform(GRID, 0.1), EuclideanBackprojection(GRID, 0.1)


def top_eigenvalue(fwd, adj):
    n = fwd.matrix.shape[1]
    M = spla.LinearOperator((n, n), matvec=lambda x: adj.matvec(fwd.matvec(x)), dtype=float)
    # the composition is not symmetric in the plain product, so take the spectral radius
    vals = spla.eigs(M, k=1, which="LM", return_eigenvectors=False)
    return float(abs(vals[0]))


def test_exact_start_terminates_immediately(ops):
    fwd, adj = ops
    f = phantom_field("f1", GRID)
    res = landweber(fwd(f), fwd, adj, ReconConfig(), f_exact=f, f0=f)
    assert res.iterations == 0 and res.stop_reason == "residual_zero"
    assert np.array_equal(res.field.values, f.values)


def test_step_scales_with_omega(ops):
    fwd, adj = ops
    g = fwd(phantom_field("f2", GRID))
    one = landweber(g, fwd, adj, ReconConfig(omega=0.1, max_iters=1))
    half = landweber(g, fwd, adj, ReconConfig(omega=0.05, max_iters=1))
    assert np.allclose(half.field.values, 0.5 * one.field.values, rtol=1e-12, atol=1e-15)


def test_residual_decreases_monotonically(ops):
    fwd, adj = ops
    lam = top_eigenvalue(fwd, adj)
    f = phantom_field("f2", GRID)
    res = landweber(fwd(f), fwd, adj, ReconConfig(omega=0.9 / lam, max_iters=60), f_exact=f)
    assert np.all(np.diff(res.residuals) <= 1e-12 * res.residuals[0])
    assert np.all(np.diff(res.errors[:11]) <= 1e-12)


def test_nesterov_reaches_same_plateau_faster():
    grid = PolarGrid(8, 26, 26)
    fwd, adj = EuclideanRayTransform(grid, 0.0), EuclideanBackprojection(grid, 0.0)
    f = phantom_field("f1", grid)
    g = fwd(f)
    plain = landweber(g, fwd, adj, ReconConfig(omega=0.1), f_exact=f)
    fast = landweber(g, fwd, adj, ReconConfig(omega=0.1, nesterov=True), f_exact=f)
    assert fast.best_error <= 1.2 * plain.best_error
    assert fast.best_iteration < plain.best_iteration


def test_divergence_is_detected(ops):
    fwd, adj = ops
    f = phantom_field("f2", GRID)
    with pytest.raises(DivergenceDetected):
        landweber(fwd(f), fwd, adj, ReconConfig(omega=50.0, max_iters=200), f_exact=f)


def test_result_tracks_best_iterate(ops):
    fwd, adj = ops
    f = phantom_field("f2", GRID)
    g = add_relative_uniform_noise(fwd(f), 0.2, seed=3)
    res = landweber(g, fwd, adj, ReconConfig(max_iters=300), f_exact=f)
    assert res.best_error == min(res.errors)
    assert relative_l2_error(res.best_field, f) == pytest.approx(res.best_error, rel=1e-12)
    assert relative_l2_error(res.field, f) == pytest.approx(res.final_error, rel=1e-12)


def test_without_oracle_stops_on_stagnation(ops):
    fwd, adj = ops
    res = landweber(fwd(phantom_field("f2", GRID)), fwd, adj, ReconConfig(max_iters=100000))
    assert res.stop_reason in ("stagnation", "residual_zero")
    assert res.errors == [] and res.best_field is None


def test_config_validation():
    for kwargs in ({"omega": 0}, {"max_iters": 0}, {"oracle_stop_tol": -1}, {"adjoint_kind": "x"}):
        with pytest.raises(ValueError):
            ReconConfig(**kwargs)


def test_noise_has_exact_relative_norm():
    data = BoundaryData(GRID, np.random.default_rng(0).normal(size=(GRID.P, GRID.Q)))
    for delta in (0.01, 0.1):
        noisy = add_relative_uniform_noise(data, delta, seed=4)
        ratio = np.linalg.norm(noisy.values - data.values) / np.linalg.norm(data.values)
        assert ratio == pytest.approx(delta, abs=1e-12)
    assert np.array_equal(add_relative_uniform_noise(data, 0.0).values, data.values)
    with pytest.raises(ValueError):
        add_relative_uniform_noise(data, -0.1)


def test_seeds_are_reproducible_and_distinct():
    data = BoundaryData(GRID, np.ones((GRID.P, GRID.Q)))
    a = add_relative_uniform_noise(data, 0.05, seed=1).values
    b = add_relative_uniform_noise(data, 0.05, seed=1).values
    c = add_relative_uniform_noise(data, 0.05, seed=2).values
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)
    assert np.linalg.norm(a - 1) == pytest.approx(np.linalg.norm(c - 1), rel=1e-12)


def test_relative_error_examples():
    f = phantom_field("f1", GRID)
    assert relative_l2_error(f, f) == 0.0
    assert relative_l2_error(TensorField.zeros(GRID), f) == 1.0
    assert relative_l2_error(f * 1.1, f) == pytest.approx(0.1, rel=1e-12)
    with pytest.raises(ZeroField):
        relative_l2_error(f, TensorField.zeros(GRID))
