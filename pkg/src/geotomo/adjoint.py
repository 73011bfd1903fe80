"""Integral representation of the adjoint: weighted backprojection.

The characteristic weight of a pair ``(x, xi)`` is

    w(x, xi) = h(exit, exit direction) / D * exp(-int_0^tau+ (alpha + Xi_n))

where ``D`` is the normal component of the exit velocity. The adjoint is
the direction sum ``2 pi / Q * sum_q w(x, xi_q) xi_q^m``. Since ``w`` is
linear in ``h`` the backprojection is assembled as a sparse matrix.

Discrete inner products
-----------------------
Boundary tables pair with ``dmu dphi sum_{p,q}``. Fields pair with the
polar trapezoid ``rho_r drho dmu`` (half weight on the outer ring) times
``n^(2m+2)``, i.e. the metric contraction and the Riemannian area element.
With these the backprojection is the adjoint of the ray transform up to
discretization error.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from .forward import LinearOperator, _path_samples, _safe
from .geometry import RefractiveMedium, builtin_medium, g_normalize, tau_plus_euclid, trace_geodesics
from .grid import (TWO_PI, BoundaryData, PolarGrid, TensorField, boundary_weights_1d,
                   boundary_weights_2d, n_components, sample_boundary_2d, symmetric_power)

TANGENT_CUTOFF = 1e-8
DENOMINATORS = ("santalo", "exit", "start")


def _backprojection_matrix(grid, rank, node, q_or_cols, interp_w, weight, dirs):
    """Rows ``(node, k)``; columns are flat boundary indices.

    ``q_or_cols`` and ``interp_w`` have a trailing axis over interpolation
    corners; ``weight`` and ``dirs`` are per (node, direction) pair.
    """
    nc = n_components(rank)
    mono = symmetric_power(dirs, rank, multinomial=False)
    ncorner = q_or_cols.shape[-1]
    base = (grid.dphi * weight)[:, None] * interp_w
    rows, cols, vals = [], [], []
    for k in range(nc):
        rows.append(np.repeat(node * nc + k, ncorner))
        cols.append(q_or_cols.reshape(-1))
        vals.append((base * mono[:, k, None]).reshape(-1))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(grid.n_nodes * nc, grid.P * grid.Q))


class EuclideanBackprojection(LinearOperator):
    """Adjoint ``I*`` for ``n = 1`` with constant attenuation."""

    def __init__(self, grid: PolarGrid, alpha0: float = 0.0, rank: int = 1):
        self.grid, self.alpha0, self.rank = grid, alpha0, rank
        x = np.repeat(grid.nodes().reshape(-1, 2), grid.Q, axis=0)
        node = np.repeat(np.arange(grid.n_nodes), grid.Q)
        qi = np.tile(np.arange(grid.Q), grid.n_nodes)
        xi = grid.directions()[qi]
        tp = tau_plus_euclid(x, xi)
        exit_ = x + tp[:, None] * xi
        denom = np.sum(x * xi, axis=-1) + tp
        weight = np.where(denom >= TANGENT_CUTOFF,
                          np.exp(-alpha0 * tp) / np.maximum(denom, TANGENT_CUTOFF), 0.0)
        lo, hi, wl, wh = boundary_weights_1d(grid, np.arctan2(exit_[:, 1], exit_[:, 0]))
        cols = np.stack([lo * grid.Q + qi, hi * grid.Q + qi], axis=-1)
        self.matrix = _backprojection_matrix(grid, rank, node, cols, np.stack([wl, wh], -1), weight, xi)

    def __call__(self, data: BoundaryData) -> TensorField:
        return TensorField(self.grid, self.rank, self.matvec(data.flat()))


def weight_euclid(data: BoundaryData, grid: PolarGrid, alpha0: float, x, xi) -> float:
    """Characteristic weight ``h(x + tau+ xi, xi) exp(-alpha0 tau+) / (<x, xi> + tau+)``."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    tp = float(tau_plus_euclid(x, xi))
    denom = float(x @ xi) + tp
    if denom < TANGENT_CUTOFF:
        return 0.0
    e = x + tp * xi
    h = sample_boundary_2d(data, grid, math.atan2(e[1], e[0]), math.atan2(xi[1], xi[0]))
    return float(h) * math.exp(-alpha0 * tp) / denom


def backproject_euclid(data: BoundaryData, grid: PolarGrid, alpha0: float, m: int = 1) -> TensorField:
    return EuclideanBackprojection(grid, alpha0, m)(data)


# ---------------------------------------------------------------------------
# variable refractive index
# ---------------------------------------------------------------------------

def xi_n(medium: RefractiveMedium, x, v) -> np.ndarray:
    """Metric attenuation term ``1/2 n^-1 (d1 n v1 + d2 n v2)`` (2D)."""
    return 0.5 * np.sum(medium.gradient(x) * v, axis=-1) / medium.index(x)


def _denominator(medium, mode, start, exit_point, exit_velocity):
    ip = np.sum(exit_point * exit_velocity, axis=-1)
    if mode == "santalo":
        return medium.index(exit_point) ** 2 * ip
    if mode == "exit":
        return medium.index(exit_point) ** -2 * ip
    if mode == "start":
        return medium.index(start) ** -2 * ip
    raise ValueError(f"denominator must be one of {DENOMINATORS}")


def characteristic_weights(medium: RefractiveMedium, x, xi, dtau: float, denominator: str = "santalo"):
    """Trace forward from ``(x, xi)`` (g-unit ``xi``) and return the exit
    angles ``(mu, phi)`` and the factor ``exp(-int (alpha + Xi_n)) / D``."""
    b = trace_geodesics(medium, x, xi, dtau, normalize=False)
    pts, vel, _ = _path_samples(b, medium)
    L = pts.shape[1]
    s = np.arange(L)[None, :]
    S = b.S[:, None]
    sp_, sv = _safe(pts), _safe(vel)
    a = medium.attenuation(sp_, sv)
    if not medium.euclidean:
        a = a + xi_n(medium, sp_, sv)
    a = np.where(s <= S, a, 0.0)
    step = (np.where(s[:, 1:] <= S - 1, dtau, 0.0)
            + np.where(s[:, 1:] == S, (b.frac * dtau)[:, None], 0.0))
    integral = np.sum(0.5 * step * (a[:, :-1] + a[:, 1:]), axis=1)
    D = _denominator(medium, denominator, x, b.exit_point, b.exit_velocity)
    w = np.where(np.abs(D) >= TANGENT_CUTOFF, np.exp(-integral) / np.where(D == 0, 1.0, D), 0.0)
    mu_t = np.arctan2(b.exit_point[:, 1], b.exit_point[:, 0])
    phi_t = np.arctan2(b.exit_velocity[:, 1], b.exit_velocity[:, 0])
    return mu_t, phi_t, w


class GeodesicBackprojection(LinearOperator):
    """Adjoint ``I*`` along geodesics with 2D boundary interpolation.

    ``denominator`` selects the exit normal factor: ``"santalo"``
    (``n(exit)^2 <x, v>``, consistent with the inner products above),
    ``"exit"`` (``n(exit)^-2 <x, v>``) or ``"start"`` (``n(x_node)^-2 <x, v>``).
    The three agree when ``n = 1`` on the boundary.
    """

    def __init__(self, grid: PolarGrid, medium: RefractiveMedium, rank: int = 1, dtau: float = 0.01,
                 denominator: str = "santalo", chunk: int = 6000):
        if denominator not in DENOMINATORS:
            raise ValueError(f"denominator must be one of {DENOMINATORS}")
        self.grid, self.medium, self.rank, self.dtau = grid, medium, rank, dtau
        self.denominator = denominator
        nodes = grid.nodes().reshape(-1, 2)
        node = np.repeat(np.arange(grid.n_nodes), grid.Q)
        qi = np.tile(np.arange(grid.Q), grid.n_nodes)
        x_all = nodes[node]
        xi_all = g_normalize(medium, x_all, grid.directions()[qi])
        blocks = []
        for start in range(0, len(node), chunk):
            sl = slice(start, start + chunk)
            mu_t, phi_t, w = characteristic_weights(medium, x_all[sl], xi_all[sl], dtau, denominator)
            cols, iw = boundary_weights_2d(grid, mu_t, phi_t)
            blocks.append(_backprojection_matrix(grid, rank, node[sl], cols, iw, w, xi_all[sl]))
        self.matrix = sum(blocks[1:], blocks[0]).tocsr()

    def __call__(self, data: BoundaryData) -> TensorField:
        return TensorField(self.grid, self.rank, self.matvec(data.flat()))


def weight_geodesic(data: BoundaryData, grid: PolarGrid, medium: RefractiveMedium, x_node, xi_node,
                    dtau: float = 0.01, denominator: str = "santalo") -> float:
    """Characteristic weight for a single g-unit pair ``(x_node, xi_node)``."""
    mu_t, phi_t, w = characteristic_weights(medium, np.asarray(x_node, float)[None],
                                            np.asarray(xi_node, float)[None], dtau, denominator)
    return float(sample_boundary_2d(data, grid, mu_t[0], phi_t[0]) * w[0])


def backproject_geodesic(data: BoundaryData, grid: PolarGrid, medium: RefractiveMedium, m: int = 1,
                         dtau: float = 0.01, denominator: str = "santalo") -> TensorField:
    return GeodesicBackprojection(grid, medium, m, dtau, denominator)(data)


def adjoint_operator(grid: PolarGrid, medium: str | RefractiveMedium = "euclid", alpha0: float = 0.0,
                     dtau: float = 0.01, rank: int = 1, denominator: str = "santalo") -> LinearOperator:
    if isinstance(medium, str):
        medium = builtin_medium(medium, alpha0)
    if medium.euclidean and medium.constant_alpha is not None:
        return EuclideanBackprojection(grid, medium.constant_alpha, rank)
    return GeodesicBackprojection(grid, medium, rank, dtau, denominator)


# ---------------------------------------------------------------------------
# inner products
# ---------------------------------------------------------------------------

def field_weights(grid: PolarGrid, rank: int = 1, medium: RefractiveMedium | None = None) -> np.ndarray:
    """Quadrature weights ``(R, P, m+1)`` of the discrete field inner product."""
    rw = grid.rho * grid.drho * grid.dmu
    rw[-1] *= 0.5
    w = np.broadcast_to(rw[:, None], (grid.R, grid.P)).copy()
    if medium is not None and not medium.euclidean:
        w *= medium.index(grid.nodes()) ** (2 * rank + 2)
    binom = np.array([math.comb(rank, k) for k in range(rank + 1)], dtype=float)
    return w[..., None] * binom


def field_inner(a: TensorField, b: TensorField, medium: RefractiveMedium | None = None) -> float:
    return float(np.sum(field_weights(a.grid, a.rank, medium) * a.values * b.values))


def data_inner(a: BoundaryData, b: BoundaryData) -> float:
    return float(a.grid.dmu * a.grid.dphi * np.sum(a.values * b.values))
