"""PDE representation of the adjoint for ``n = 1`` and constant attenuation.

For each direction ``xi_q`` the function ``w(x) = w(x, xi_q)`` solves the
viscosity-regularized transport problem

    -eps (w_rr + w_r / rho + w_mumu / rho^2)
        - w_rho cos(phi_q - mu) - w_mu sin(phi_q - mu) / rho + alpha0 w = 0

inside the disc, with ``w`` prescribed on the outer ring from the boundary
data. The discretization uses forward differences for the first radial
derivative, central differences otherwise, and an antipodal stencil for the
second radial derivative on the innermost ring. The resulting square systems
are nearly singular: for directions pointing inwards the forward radial
difference runs against the characteristics, and the smallest singular
values decay geometrically with ``R``. They are solved in the minimum-norm
least-squares sense with singular values below ``rcond * s_max`` discarded.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .adjoint import TANGENT_CUTOFF, data_inner, field_inner
from .forward import EuclideanRayTransform
from .geometry import tau_plus_euclid
from .grid import BoundaryData, PolarGrid, TensorField, boundary_weights_1d, symmetric_power

log = logging.getLogger(__name__)

DENSE_LIMIT = 2000
LSQR_TOL = 1e-10
RCOND = 1e-4


class OddP(ValueError):
    """The antipodal stencil on the innermost ring needs an even ``P``."""


class NonConvergence(RuntimeError):
    pass


class ZeroData(ValueError):
    pass


@dataclass
class TransportSystem:
    """Sparse system over the ``(R-1) P`` interior unknowns of one direction.

    Unknown ``(r, p)`` (1-based) sits at ``(r - 1) P + (p - 1)``.
    """

    q_index: int
    matrix: sp.csr_matrix
    rhs: np.ndarray
    epsilon: float


def _stencil(grid: PolarGrid, alpha0: float, epsilon: float, q: int):
    """Triplets ``(row, col, value)`` of the interior operator; columns
    ``>= (R-1) P`` refer to the outer ring ``r = R``."""
    if grid.P % 2:
        raise OddP("P must be even")
    R, P = grid.R, grid.P
    dr, dm = grid.drho, grid.dmu
    r = np.repeat(np.arange(1, R), P)
    p = np.tile(np.arange(P), R - 1)
    rho = r / R
    ang = grid.phi[q - 1] - grid.mu[p]
    c, s = np.cos(ang), np.sin(ang)
    row = (r - 1) * P + p

    def idx(rr, pp):
        return (rr - 1) * P + pp % P

    entries = []

    def add(cols, vals):
        entries.append((row, cols, np.broadcast_to(vals, row.shape)))

    # first radial derivative: forward difference, with viscous 1/rho term
    d1 = -epsilon / rho - c
    add(idx(r + 1, p), d1 / dr)
    add(idx(r, p), -d1 / dr)
    # second radial derivative
    inner = r == 1
    e2 = -epsilon / dr**2
    add(idx(r + 1, p), np.where(inner, 2.0 * e2 / 3.0, e2))
    add(idx(r, p), np.where(inner, -e2, -2.0 * e2))
    add(np.where(inner, idx(r, p + P // 2), idx(r - 1, p)), np.where(inner, e2 / 3.0, e2))
    # azimuthal derivatives
    a1 = -s / rho / (2.0 * dm)
    a2 = -epsilon / (rho**2 * dm**2)
    add(idx(r, p + 1), a1 + a2)
    add(idx(r, p - 1), -a1 + a2)
    add(idx(r, p), -2.0 * a2)
    add(idx(r, p), np.full(row.shape, float(alpha0)))

    rows = np.concatenate([e[0] for e in entries])
    cols = np.concatenate([e[1] for e in entries])
    vals = np.concatenate([e[2] for e in entries])
    return rows, cols, vals


def assemble_system(grid: PolarGrid, alpha0: float, epsilon: float, q: int,
                    boundary_w: np.ndarray) -> TransportSystem:
    """Assemble the system of direction ``q`` (1-based).

    ``boundary_w`` holds the ``P`` prescribed values on the ring ``r = R``.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    boundary_w = np.asarray(boundary_w, dtype=float)
    if boundary_w.shape != (grid.P,):
        raise ValueError(f"boundary_w must have shape ({grid.P},)")
    A, coupling = _split(grid, alpha0, epsilon, q)
    return TransportSystem(q, A, -(coupling @ boundary_w), epsilon)


def _split(grid, alpha0, epsilon, q):
    """Interior matrix and the coupling to the outer ring."""
    n = (grid.R - 1) * grid.P
    rows, cols, vals = _stencil(grid, alpha0, epsilon, q)
    full = sp.csr_matrix((vals, (rows, cols)), shape=(n, n + grid.P))
    full.eliminate_zeros()
    return full[:, :n].tocsr(), full[:, n:].tocsr()


def solve_min_norm(system: TransportSystem, rcond: float = RCOND, method: str = "svd") -> np.ndarray:
    """Minimum-norm least-squares solution of one transport system.

    ``method="svd"`` (default) uses the dense SVD solver with relative
    cutoff ``rcond``. ``method="lsqr"`` runs LSQR with tolerance ``1e-10``
    and at most ``10 n`` iterations; systems with at most ``DENSE_LIMIT``
    unknowns always go to the dense solver.
    """
    if method not in ("svd", "lsqr"):
        raise ValueError("method must be 'svd' or 'lsqr'")
    A, b = system.matrix, system.rhs
    n = A.shape[1]
    if not np.any(b):
        return np.zeros(n)
    if method == "svd" or n <= DENSE_LIMIT:
        return scipy.linalg.lstsq(A.toarray(), b, cond=rcond, lapack_driver="gelsd")[0]
    res = spla.lsqr(A, b, atol=LSQR_TOL, btol=LSQR_TOL, iter_lim=10 * n)
    x, istop, itn, r1 = res[0], res[1], res[2], res[3]
    if istop == 7:
        raise NonConvergence(f"LSQR stopped after {itn} iterations with residual {r1:.3g}")
    return x


def boundary_values(data: BoundaryData, alpha0: float) -> np.ndarray:
    """Values ``w(x_{R,p}, xi_q)`` on the outer ring, shape ``(P, Q)``.

    Uses the characteristic weight
    ``h(x + tau+ xi, xi) exp(-alpha0 tau+) / (<x, xi> + tau+)``.
    """
    return (boundary_value_matrix(data.grid, alpha0) @ data.flat()).reshape(data.grid.P, data.grid.Q)


def boundary_value_matrix(grid: PolarGrid, alpha0: float) -> sp.csr_matrix:
    """Sparse map from the flat data table to flat outer-ring values ``(p, q)``."""
    x = np.repeat(grid.boundary_points(), grid.Q, axis=0)
    qi = np.tile(np.arange(grid.Q), grid.P)
    xi = grid.directions()[qi]
    tp = tau_plus_euclid(x, xi)
    e = x + tp[:, None] * xi
    denom = np.sum(x * xi, axis=-1) + tp
    weight = np.where(denom >= TANGENT_CUTOFF, np.exp(-alpha0 * tp) / np.maximum(denom, TANGENT_CUTOFF), 0.0)
    lo, hi, wl, wh = boundary_weights_1d(grid, np.arctan2(e[:, 1], e[:, 0]))
    row = np.arange(grid.P * grid.Q)
    rows = np.concatenate([row, row])
    cols = np.concatenate([lo * grid.Q + qi, hi * grid.Q + qi])
    vals = np.concatenate([weight * wl, weight * wh])
    return sp.csr_matrix((vals, (rows, cols)), shape=(grid.P * grid.Q, grid.P * grid.Q))


class PDEAdjoint:
    """Adjoint via the transport systems, reusable across many data tables.

    When ``P`` is a multiple of ``Q`` every system is a rotation of the
    first one, so only one (dense, pseudo-inverse) solve operator is built.
    Otherwise each direction is solved separately.
    """

    def __init__(self, grid: PolarGrid, alpha0: float = 0.0, epsilon: float = 0.0, rank: int = 1,
                 rcond: float = RCOND):
        if grid.P % 2:
            raise OddP("P must be even")
        self.grid, self.alpha0, self.epsilon, self.rank = grid, alpha0, epsilon, rank
        self.rcond = rcond
        self._bmat = boundary_value_matrix(grid, alpha0)
        self._pinv = None
        self._shift = None
        if grid.P % grid.Q == 0:
            self._shift = grid.P // grid.Q
            A, self._coupling = _split(grid, alpha0, epsilon, 1)
            self._pinv = scipy.linalg.pinv(A.toarray(), atol=0.0, rtol=rcond)

    def solve_all(self, data: BoundaryData) -> np.ndarray:
        """Table ``w[r, p, q]`` for ``r = 1..R`` (the last ring is the boundary)."""
        grid = self.grid
        R, P, Q = grid.R, grid.P, grid.Q
        wb = (self._bmat @ data.flat()).reshape(P, Q)
        w = np.zeros((R, P, Q))
        w[-1] = wb
        if self._pinv is not None:
            # direction q is direction 1 with the azimuth shifted by (q - 1) * P / Q
            shifts = np.arange(Q) * self._shift
            pidx = (np.arange(P)[None, :] + shifts[:, None]) % P          # (Q, P)
            bw = wb[pidx, np.arange(Q)[:, None]]                          # rotated boundary values
            rhs = -(self._coupling @ bw.T)                                # (n, Q)
            sol = (self._pinv @ rhs).reshape(R - 1, P, Q)
            for q in range(Q):
                w[:-1, pidx[q], q] = sol[:, :, q]
            return w
        for q in range(Q):
            system = assemble_system(grid, self.alpha0, self.epsilon, q + 1, wb[:, q])
            w[:-1, :, q] = solve_min_norm(system, self.rcond).reshape(R - 1, P)
        return w

    def __call__(self, data: BoundaryData) -> TensorField:
        w = self.solve_all(data)
        mono = symmetric_power(self.grid.directions(), self.rank, multinomial=False)   # (Q, m+1)
        return TensorField(self.grid, self.rank, self.grid.dphi * np.einsum("rpq,qk->rpk", w, mono))

    def matvec(self, y: np.ndarray) -> np.ndarray:
        return self(BoundaryData(self.grid, y.reshape(self.grid.P, self.grid.Q))).flat()


def pde_adjoint(data: BoundaryData, grid: PolarGrid, alpha0: float = 0.0, epsilon: float = 0.0,
                m: int = 1, rcond: float = RCOND) -> TensorField:
    """One-shot PDE adjoint ``S*`` of a boundary table."""
    return PDEAdjoint(grid, alpha0, epsilon, m, rcond)(data)


def duality_defect(f: TensorField, adjoint_kind: str = "integral", grid: PolarGrid | None = None,
                   alpha0: float = 0.0, epsilon: float = 0.0, T: int = 200, forward=None,
                   adjoint=None) -> float:
    """``|<If, If> - <f, A If>| / <If, If>`` with the quadrature inner products.

    Pre-built ``forward`` / ``adjoint`` operators may be passed to avoid
    reassembly.
    """
    from .adjoint import EuclideanBackprojection

    grid = grid or f.grid
    fwd = forward or EuclideanRayTransform(grid, alpha0, T, f.rank)
    g = fwd(f)
    gg = data_inner(g, g)
    if gg == 0:
        raise ZeroData("forward data vanish")
    if adjoint is None:
        if adjoint_kind == "integral":
            adjoint = EuclideanBackprojection(grid, alpha0, f.rank)
        elif adjoint_kind == "pde":
            adjoint = PDEAdjoint(grid, alpha0, epsilon, f.rank)
        else:
            raise ValueError("adjoint_kind must be 'integral' or 'pde'")
    return abs(gg - field_inner(f, adjoint(g))) / gg
