"""Polar discretization of the unit disc, tensor fields and boundary data.

Node conventions
----------------
Interior nodes are ``x_{r,p} = rho_r (cos mu_p, sin mu_p)`` with
``rho_r = r / R`` (``r = 1..R``) and ``mu_p = 2 pi p / P`` (``p = 1..P``).
Directions are ``phi_q = 2 pi q / Q`` (``q = 1..Q``). Arrays store the
1-based index ``p`` at position ``p - 1``; the same holds for ``r`` and ``q``.
The flat node index is ``(r - 1) * P + (p - 1)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

TWO_PI = 2.0 * math.pi
_SNAP = 1e-10


@dataclass(frozen=True)
class PolarGrid:
    """Radii ``R``, boundary/angular nodes ``P`` and directions ``Q``."""

    R: int
    P: int
    Q: int

    def __post_init__(self):
        if self.R < 2:
            raise ValueError(f"R must be >= 2, got {self.R}")
        if self.P < 4 or self.P % 2:
            raise ValueError(f"P must be even and >= 4, got {self.P}")
        if self.Q < 2:
            raise ValueError(f"Q must be >= 2, got {self.Q}")

    @property
    def n_nodes(self) -> int:
        return self.R * self.P

    @property
    def drho(self) -> float:
        return 1.0 / self.R

    @property
    def dmu(self) -> float:
        return TWO_PI / self.P

    @property
    def dphi(self) -> float:
        return TWO_PI / self.Q

    @property
    def rho(self) -> np.ndarray:
        return np.arange(1, self.R + 1) / self.R

    @property
    def mu(self) -> np.ndarray:
        return TWO_PI * np.arange(1, self.P + 1) / self.P

    @property
    def phi(self) -> np.ndarray:
        return TWO_PI * np.arange(1, self.Q + 1) / self.Q

    def nodes(self) -> np.ndarray:
        """Cartesian node coordinates, shape ``(R, P, 2)``."""
        rho, mu = np.meshgrid(self.rho, self.mu, indexing="ij")
        return np.stack([rho * np.cos(mu), rho * np.sin(mu)], axis=-1)

    def boundary_points(self) -> np.ndarray:
        """Boundary nodes ``x_p``, shape ``(P, 2)``."""
        return np.stack([np.cos(self.mu), np.sin(self.mu)], axis=-1)

    def directions(self) -> np.ndarray:
        """Unit directions ``xi_q``, shape ``(Q, 2)``."""
        return np.stack([np.cos(self.phi), np.sin(self.phi)], axis=-1)

    def outgoing_mask(self) -> np.ndarray:
        """``(P, Q)`` mask of pairs with ``<x_p, xi_q> > 0``."""
        return np.cos(self.phi[None, :] - self.mu[:, None]) > 1e-12


def n_components(rank: int) -> int:
    """Independent components of a symmetric rank-``m`` tensor in 2D."""
    return rank + 1


def component_names(rank: int) -> list[str]:
    if rank == 0:
        return ["f"]
    return ["f" + "1" * (rank - k) + "2" * k for k in range(rank + 1)]


def symmetric_power(directions: np.ndarray, rank: int, multinomial: bool = True) -> np.ndarray:
    """Coefficients of ``xi^m`` in the symmetric component basis.

    With ``multinomial=True`` the result ``c`` satisfies
    ``<f, xi^m> = sum_k c_k f_k``; without it the plain monomials
    ``xi_1^(m-k) xi_2^k`` are returned (the backprojection kernel).
    """
    d = np.asarray(directions, dtype=float)
    out = np.empty(d.shape[:-1] + (rank + 1,))
    for k in range(rank + 1):
        c = math.comb(rank, k) if multinomial else 1.0
        out[..., k] = c * d[..., 0] ** (rank - k) * d[..., 1] ** k
    return out


@dataclass
class TensorField:
    """Symmetric rank-``m`` tensor samples on the interior nodes."""

    grid: PolarGrid
    rank: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        shape = (self.grid.R, self.grid.P, n_components(self.rank))
        if self.values.shape != shape:
            self.values = self.values.reshape(shape)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("tensor field contains non-finite values")

    @classmethod
    def zeros(cls, grid: PolarGrid, rank: int = 1) -> TensorField:
        return cls(grid, rank, np.zeros((grid.R, grid.P, n_components(rank))))

    @classmethod
    def from_function(cls, grid: PolarGrid, func, rank: int = 1) -> TensorField:
        """Sample ``func(x1, x2) -> sequence of m+1 arrays`` on the nodes."""
        xy = grid.nodes()
        comps = func(xy[..., 0], xy[..., 1])
        vals = np.stack([np.broadcast_to(c, xy.shape[:2]) for c in comps], axis=-1)
        return cls(grid, rank, vals)

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def with_values(self, values: np.ndarray) -> TensorField:
        return TensorField(self.grid, self.rank, np.asarray(values).reshape(self.values.shape))

    def __add__(self, other: TensorField) -> TensorField:
        return self.with_values(self.values + other.values)

    def __sub__(self, other: TensorField) -> TensorField:
        return self.with_values(self.values - other.values)

    def __mul__(self, c: float) -> TensorField:
        return self.with_values(c * self.values)

    __rmul__ = __mul__


@dataclass
class BoundaryData:
    """Table ``H[p-1, q-1]`` of transform values on boundary pairs."""

    grid: PolarGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.P, self.grid.Q)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("boundary data contains non-finite values")

    @classmethod
    def zeros(cls, grid: PolarGrid) -> BoundaryData:
        return cls(grid, np.zeros((grid.P, grid.Q)))

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def with_values(self, values: np.ndarray) -> BoundaryData:
        return BoundaryData(self.grid, values)

    def __add__(self, other: BoundaryData) -> BoundaryData:
        return self.with_values(self.values + other.values)

    def __sub__(self, other: BoundaryData) -> BoundaryData:
        return self.with_values(self.values - other.values)

    def __mul__(self, c: float) -> BoundaryData:
        return self.with_values(c * self.values)

    __rmul__ = __mul__


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------

def _periodic_cell(angle: np.ndarray, count: int):
    """Lower/upper 0-based array positions and fraction for a periodic axis.

    Node ``j`` (1-based) sits at ``2 pi j / count``; array position ``j - 1``.
    """
    s = np.mod(np.asarray(angle, dtype=float), TWO_PI) * count / TWO_PI
    near = np.rint(s)
    s = np.where(np.abs(s - near) < _SNAP, near, s)
    k = np.floor(s)
    t = s - k
    k = k.astype(np.int64)
    lo = np.mod(k - 1, count)
    hi = np.mod(k, count)
    return lo, hi, t


def interpolation_matrix(grid: PolarGrid, points: np.ndarray) -> sp.csr_matrix:
    """Sparse ``(N, R*P)`` matrix evaluating the polar interpolant at points.

    Points in the annulus ``|x| >= rho_1`` use the bilinear blend of the
    four surrounding nodes; points in the inner disc blend the two nearest
    ring-1 nodes with the ring-1 average assigned to the origin.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    npts = len(pts)
    rad = np.hypot(pts[:, 0], pts[:, 1])
    if np.any(rad > 1.0 + 1e-12):
        raise ValueError(f"point outside the unit disc (|x| = {rad.max():.16g})")
    R, P = grid.R, grid.P
    lo, hi, tp = _periodic_cell(np.arctan2(pts[:, 1], pts[:, 0]), P)

    u = np.minimum(rad, 1.0) * R
    near = np.rint(u)
    u = np.where(np.abs(u - near) < _SNAP, near, u)
    outer = u >= 1.0

    rows, cols, vals = [], [], []
    idx = np.nonzero(outer)[0]
    if idx.size:
        i = np.minimum(np.floor(u[idx]), R - 1).astype(np.int64)
        tr = u[idx] - i
        base_in = (i - 1) * P
        base_out = i * P
        for base, wr in ((base_in, 1.0 - tr), (base_out, tr)):
            for col, wp in ((lo[idx], 1.0 - tp[idx]), (hi[idx], tp[idx])):
                rows.append(idx)
                cols.append(base + col)
                vals.append(wr * wp)

    idx = np.nonzero(~outer)[0]
    if idx.size:
        tr = u[idx]
        for col, wp in ((lo[idx], 1.0 - tp[idx]), (hi[idx], tp[idx])):
            rows.append(idx)
            cols.append(col)
            vals.append(tr * wp)
        # origin value: average of ring 1
        rows.append(np.repeat(idx, P))
        cols.append(np.tile(np.arange(P), idx.size))
        vals.append(np.repeat((1.0 - tr) / P, P))

    rows = np.concatenate(rows) if rows else np.empty(0, np.int64)
    cols = np.concatenate(cols) if cols else np.empty(0, np.int64)
    vals = np.concatenate(vals) if vals else np.empty(0)
    return sp.csr_matrix((vals, (rows, cols)), shape=(npts, grid.n_nodes))


def sample_interior(field: TensorField, grid: PolarGrid, x) -> np.ndarray:
    """Interpolated tensor components at ``x`` (shape ``(..., m+1)``)."""
    x = np.asarray(x, dtype=float)
    W = interpolation_matrix(grid, x)
    out = W @ field.values.reshape(grid.n_nodes, -1)
    return out.reshape(x.shape[:-1] + (field.values.shape[-1],))


def boundary_weights_1d(grid: PolarGrid, mu_tilde):
    """Positions and weights of the two boundary nodes bracketing ``mu_tilde``."""
    lo, hi, t = _periodic_cell(mu_tilde, grid.P)
    return lo, hi, 1.0 - t, t


def sample_boundary_1d(data: BoundaryData, grid: PolarGrid, mu_tilde, q: int):
    """Linear interpolation in ``mu`` at fixed 1-based direction index ``q``."""
    lo, hi, wl, wh = boundary_weights_1d(grid, mu_tilde)
    col = data.values[:, (q - 1) % grid.Q]
    return wl * col[lo] + wh * col[hi]


def boundary_weights_2d(grid: PolarGrid, mu_tilde, phi_tilde):
    """Flat ``(p, q)`` indices ``(..., 4)`` and bilinear weights on the torus."""
    p_lo, p_hi, tp = _periodic_cell(mu_tilde, grid.P)
    q_lo, q_hi, tq = _periodic_cell(phi_tilde, grid.Q)
    Q = grid.Q
    idx = np.stack([p_lo * Q + q_lo, p_lo * Q + q_hi, p_hi * Q + q_lo, p_hi * Q + q_hi], axis=-1)
    w = np.stack([(1 - tp) * (1 - tq), (1 - tp) * tq, tp * (1 - tq), tp * tq], axis=-1)
    return idx, w


def sample_boundary_2d(data: BoundaryData, grid: PolarGrid, mu_tilde, phi_tilde):
    """Bilinear interpolation of boundary data in ``(mu, phi)``."""
    idx, w = boundary_weights_2d(grid, mu_tilde, phi_tilde)
    return np.sum(data.flat()[idx] * w, axis=-1)


def grid_ratio_hint(total_nodes: int) -> tuple[int, int]:
    """Pair ``(R, P)`` with ``R * P`` close to ``total_nodes`` and ``P ~ pi R``.

    For each ``R`` the even ``P`` nearest to ``total_nodes / R`` is taken;
    the ``R`` whose ``P`` is closest to ``pi R`` wins.
    """
    if total_nodes < 8:
        raise ValueError("total_nodes must be >= 8")
    best = None
    for R in range(2, total_nodes // 4 + 1):
        P = max(4, 2 * int(round(total_nodes / (2.0 * R))))
        score = abs(P - math.pi * R)
        if best is None or score < best[0]:
            best = (score, R, P)
    return best[1], best[2]


# ---------------------------------------------------------------------------
# CSV serialization
# ---------------------------------------------------------------------------
#
# field CSV:    r, p, rho, mu, x1, x2, <component columns>
# boundary CSV: p, q, mu, phi, value
# The first line is a comment "# R=.. P=.. Q=.. rank=.." carrying the grid.

def _fmt(v: float) -> str:
    return repr(float(v))


def _read_header(fh):
    line = fh.readline()
    if not line.startswith("#"):
        raise ValueError("missing grid header line")
    meta = dict(tok.split("=") for tok in line[1:].split())
    return {k: int(v) for k, v in meta.items()}


def write_field_csv(field: TensorField, path) -> None:
    g = field.grid
    xy = g.nodes()
    with open(path, "w", newline="") as fh:
        fh.write(f"# R={g.R} P={g.P} Q={g.Q} rank={field.rank}\n")
        w = csv.writer(fh)
        w.writerow(["r", "p", "rho", "mu", "x1", "x2"] + component_names(field.rank))
        for r in range(g.R):
            for p in range(g.P):
                w.writerow([r + 1, p + 1, _fmt(g.rho[r]), _fmt(g.mu[p]),
                            _fmt(xy[r, p, 0]), _fmt(xy[r, p, 1])]
                           + [_fmt(v) for v in field.values[r, p]])


def read_field_csv(path) -> TensorField:
    with open(path, newline="") as fh:
        meta = _read_header(fh)
        grid = PolarGrid(meta["R"], meta["P"], meta["Q"])
        rank = meta["rank"]
        reader = csv.reader(fh)
        header = next(reader)
        ncomp = n_components(rank)
        if header[6:] != component_names(rank):
            raise ValueError(f"unexpected component columns {header[6:]}")
        vals = np.zeros((grid.R, grid.P, ncomp))
        for row in reader:
            r, p = int(row[0]), int(row[1])
            vals[r - 1, p - 1] = [float(v) for v in row[6:6 + ncomp]]
    return TensorField(grid, rank, vals)


def write_boundary_csv(data: BoundaryData, path) -> None:
    g = data.grid
    with open(path, "w", newline="") as fh:
        fh.write(f"# R={g.R} P={g.P} Q={g.Q}\n")
        w = csv.writer(fh)
        w.writerow(["p", "q", "mu", "phi", "value"])
        for p in range(g.P):
            for q in range(g.Q):
                w.writerow([p + 1, q + 1, _fmt(g.mu[p]), _fmt(g.phi[q]), _fmt(data.values[p, q])])


def read_boundary_csv(path) -> BoundaryData:
    with open(Path(path), newline="") as fh:
        meta = _read_header(fh)
        grid = PolarGrid(meta["R"], meta["P"], meta["Q"])
        reader = csv.reader(fh)
        next(reader)
        vals = np.zeros((grid.P, grid.Q))
        for row in reader:
            vals[int(row[0]) - 1, int(row[1]) - 1] = float(row[4])
    return BoundaryData(grid, vals)
