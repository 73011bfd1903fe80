import math

import numpy as np
import pytest

from geotomo.geometry import (MaxStepsExceeded, RefractiveMedium, builtin_medium,
                              check_slow_variation, christoffel, g_normalize, geodesic_trace,
                              tau_minus_euclid, tau_plus_euclid, trace_geodesics)

SLOW = builtin_medium("paper-slow")


def _fd_christoffel(medium, x, h=1e-6):
    """Symbols from central differences of g = n^2 I."""
    def g(y):
        return medium.index(y) ** 2 * np.eye(2)

    dg = np.zeros((2, 2, 2))    # dg[l, i, j] = d_l g_ij
    for l in range(2):
        e = np.zeros(2)
        e[l] = h
        dg[l] = (g(x + e) - g(x - e)) / (2 * h)
    ginv = np.linalg.inv(g(x))
    G = np.zeros((2, 2, 2))
    for k in range(2):
        for i in range(2):
            for j in range(2):
                G[k, i, j] = 0.5 * sum(ginv[k, l] * (dg[i, j, l] + dg[j, i, l] - dg[l, i, j]) for l in range(2))
    return G


def test_christoffel_vanishes_for_constant_index():
    assert np.all(christoffel(builtin_medium("euclid"), np.array([0.3, -0.2])) == 0)
    assert np.allclose(christoffel(SLOW, np.zeros(2)), 0)


def test_christoffel_matches_metric_finite_differences():
    x = np.array([0.5, 0.0])
    G = christoffel(SLOW, x)
    ref = _fd_christoffel(SLOW, x)
    assert np.allclose(G, ref, rtol=1e-6, atol=1e-6 * np.abs(ref).max())
    assert np.array_equal(G, np.swapaxes(G, 1, 2))


def test_gradient_fallback_is_second_order():
    m = RefractiveMedium(n=lambda x: 1.0 + 0.3 * np.sin(x[..., 0]) * x[..., 1] ** 2)
    x = np.array([[0.4, 0.5]])
    exact = np.array([0.3 * np.cos(0.4) * 0.25, 0.3 * np.sin(0.4) * 2 * 0.5])
    assert np.allclose(m.gradient(x)[0], exact, atol=1e-9)


def test_builtin_media():
    x = np.array([[0.6, 0.8]])
    assert math.isclose(builtin_medium("paper-slow").index(x)[0], 4 / 3 + 0.002)
    assert math.isclose(builtin_medium("paper-mild").index(x)[0], 1.002)
    assert builtin_medium("euclid", 0.1).constant_alpha == 0.1
    with pytest.raises(ValueError):
        builtin_medium("glass")


def test_euclidean_chord():
    path = geodesic_trace(builtin_medium("euclid"), [1.0, 0.0], [-1.0, 0.0], 0.01)
    assert np.allclose(path.exit_point, [-1.0, 0.0], atol=1e-12)
    assert math.isclose(path.length, 2.0, abs_tol=1e-8)
    assert 0 < path.dtau_star <= path.dtau
    assert np.allclose(path.points[:-1, 1], 0.0, atol=1e-10)


def test_tangential_start_exits_immediately():
    path = geodesic_trace(builtin_medium("euclid"), [1.0, 0.0], [0.0, 1.0], 0.01)
    assert np.allclose(path.exit_point, [1.0, 0.0])
    assert path.length == pytest.approx(0.0, abs=1e-12)


def test_exit_point_has_unit_norm_and_interior_points_inside(rng):
    x = rng.uniform(-0.5, 0.5, size=(50, 2))
    t = rng.uniform(0, 2 * np.pi, 50)
    b = trace_geodesics(SLOW, x, np.stack([np.cos(t), np.sin(t)], -1), 0.02)
    assert np.allclose(np.linalg.norm(b.exit_point, axis=-1), 1.0, atol=1e-12)
    for i in range(50):
        inner = b.points[i, :b.S[i]]
        assert np.all(np.linalg.norm(inner, axis=-1) <= 1.0)
        assert np.linalg.norm(b.points[i, b.S[i]]) > 1.0


def test_euclidean_exit_matches_tau_plus(rng):
    x = rng.uniform(-0.6, 0.6, size=(20, 2))
    t = rng.uniform(0, 2 * np.pi, 20)
    xi = np.stack([np.cos(t), np.sin(t)], -1)
    b = trace_geodesics(builtin_medium("euclid"), x, xi, 1e-3)
    ref = x + tau_plus_euclid(x, xi)[:, None] * xi
    assert np.allclose(b.exit_point, ref, atol=1e-6)


def test_refined_step_exit_point_paper_slow():
    xi = g_normalize(SLOW, np.array([1.0, 0.0]), np.array([-1.0, 1.0]) / math.sqrt(2))
    dtau = 0.01
    coarse = geodesic_trace(SLOW, [1.0, 0.0], xi, dtau)
    fine = geodesic_trace(SLOW, [1.0, 0.0], xi, dtau / 100)
    assert np.linalg.norm(coarse.exit_point - fine.exit_point) <= 10 * dtau**4


def test_g_speed_is_conserved():
    xi = np.array([-0.3, 0.8])
    path = geodesic_trace(SLOW, [0.6, -0.2], xi, 0.01)
    speed = SLOW.index(path.points[:-1]) * np.linalg.norm(path.velocities[:-1], axis=-1)
    assert np.ptp(speed) < 1e-9
    assert math.isclose(speed[0], 1.0)


def test_backward_trace_reverses_direction():
    f = geodesic_trace(builtin_medium("euclid"), [0.0, 0.0], [1.0, 0.0], 0.01, "backward")
    assert np.allclose(f.exit_point, [-1.0, 0.0])


def test_trapped_and_coarse_failures():
    trap = RefractiveMedium(n=lambda x: np.ones(x.shape[:-1]),
                            grad_n=lambda x: np.zeros(x.shape), euclidean=True)
    with pytest.raises(MaxStepsExceeded):
        trace_geodesics(trap, [[0.0, 0.0]], [[1.0, 0.0]], 0.01, max_steps=10)
    with pytest.raises(ValueError):
        geodesic_trace(SLOW, [0.0, 0.0], [1.0, 0.0], 0.01, "sideways")
    with pytest.raises(ValueError):
        trace_geodesics(SLOW, [[1.5, 0.0]], [[1.0, 0.0]], 0.01)


def test_tau_formulas():
    assert tau_minus_euclid([1.0, 0.0], [1.0, 0.0]) == -2.0
    assert tau_minus_euclid([1.0, 0.0], [0.0, 1.0]) == 0.0
    s = math.sqrt(0.5)
    assert math.isclose(tau_minus_euclid([0.0, 1.0], [s, s]), -math.sqrt(2))
    with pytest.raises(ValueError):
        tau_minus_euclid([1.0, 0.0], [-1.0, 0.0])
    assert math.isclose(tau_plus_euclid([0.0, 0.0], [s, -s]), 1.0)
    assert math.isclose(tau_plus_euclid([0.5, 0.0], [1.0, 0.0]), 0.5)
    assert math.isclose(tau_plus_euclid([0.5, 0.0], [0.0, 1.0]), math.sqrt(0.75))
    assert tau_plus_euclid([1.0, 0.0], [0.0, 1.0]) == 0.0


def test_slow_variation_diagnostic():
    ok, sup = check_slow_variation(builtin_medium("euclid", 0.01))
    assert ok and sup == 0.0
    ok, sup = check_slow_variation(builtin_medium("paper-slow", 0.01))
    assert ok and math.isclose(sup, 0.004 / (4 / 3 + 0.002), rel_tol=1e-3)
    steep = RefractiveMedium(n=lambda x: 1.0 + 10 * np.sum(x * x, axis=-1), grad_n=lambda x: 20 * x,
                             alpha=0.01, alpha_0=0.01)
    ok, sup = check_slow_variation(steep)
    # |grad n| / n = 20 s / (1 + 10 s^2) peaks at s = 1 / sqrt(10)
    assert not ok and math.isclose(sup, math.sqrt(10), rel_tol=1e-3)


def test_rk4_is_fourth_order_on_paper_slow():
    x = np.array([[1.0, 0.0]])
    xi = g_normalize(SLOW, x, np.array([[-1.0, 1.0]]) / math.sqrt(2))
    tau = 1.2

    def state(n):
        b = trace_geodesics(SLOW, x, xi, tau / n)
        return np.concatenate([b.points[0, n], b.velocities[0, n]])

    ref = state(960)
    e = [np.linalg.norm(state(n) - ref) for n in (6, 12, 24)]
    orders = np.log2(np.array(e[:-1]) / np.array(e[1:]))
    assert np.all(np.abs(orders - 4) < 0.3)
