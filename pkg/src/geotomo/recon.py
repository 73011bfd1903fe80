"""Damped Landweber iteration with optional Nesterov momentum."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .grid import BoundaryData, PolarGrid, TensorField

log = logging.getLogger(__name__)


class DivergenceDetected(RuntimeError):
    """Residual grew far beyond its minimum; the relaxation parameter is too large."""


class ZeroField(ValueError):
    pass


@dataclass
class ReconConfig:
    """Landweber settings.

    The stagnation rule halts once the smallest oracle error seen so far (or,
    without a known solution, the relative residual) has decreased by less
    than ``stagnation_tol`` over ``stagnation_window`` consecutive
    iterations. Tracking the running minimum keeps the rule from firing on
    the ripples of accelerated iterates.
    """

    omega: float = 0.1
    max_iters: int = 5000
    oracle_stop_tol: float = 1e-5
    stagnation_tol: float = 1e-7
    stagnation_window: int = 25
    nesterov: bool = False
    adjoint_kind: str = "integral"
    divergence_factor: float = 10.0

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.oracle_stop_tol < 0 or self.stagnation_tol < 0:
            raise ValueError("tolerances must be non-negative")
        if self.adjoint_kind not in ("integral", "pde"):
            raise ValueError("adjoint_kind must be 'integral' or 'pde'")


@dataclass
class LandweberResult:
    """Outcome of a Landweber run.

    ``errors[k]`` is the oracle error of iterate ``k`` (``errors[0]`` is
    the initial guess). Under noise the error semi-converges; ``best_*``
    hold the iterate at the bottom of that curve, which is the value an
    oracle-stopped iteration would report.
    """

    field: TensorField
    iterations: int
    stop_reason: str
    residuals: list[float] = field(default_factory=list)
    errors: list[float] = field(default_factory=list)
    best_field: TensorField | None = None
    best_iteration: int | None = None

    @property
    def final_error(self) -> float | None:
        return self.errors[-1] if self.errors else None

    @property
    def best_error(self) -> float | None:
        return self.errors[self.best_iteration] if self.errors else None


def _array_map(op, wrap):
    if hasattr(op, "matvec"):
        return op.matvec
    return lambda x: op(wrap(x)).flat()


def landweber(gdelta: BoundaryData, forward_op, adjoint_op, config: ReconConfig | None = None,
              f_exact: TensorField | None = None, f0: TensorField | None = None) -> LandweberResult:
    """Iterate ``f <- f - omega I*(I f - g)`` starting from ``f0`` (default zero).

    With ``config.nesterov`` the gradient step is taken from the
    extrapolated point ``f_k + (k-1)/(k+2) (f_k - f_{k-1})``.
    """
    cfg = config or ReconConfig()
    grid = gdelta.grid
    template = adjoint_op(gdelta) if f0 is None else f0
    rank = template.rank

    def as_field(x):
        return TensorField(grid, rank, x)

    fwd = _array_map(forward_op, as_field)
    adj = _array_map(adjoint_op, lambda y: BoundaryData(grid, y))
    g = gdelta.flat()
    gnorm = np.linalg.norm(g)

    x = np.zeros_like(template.flat()) if f0 is None else f0.flat().copy()
    x_prev = x.copy()
    ref = ref_norm = None
    errors: list[float] = []
    if f_exact is not None:
        ref = f_exact.flat()
        ref_norm = np.linalg.norm(ref)
        if ref_norm == 0:
            raise ZeroField("exact field has zero norm")
        errors.append(float(np.linalg.norm(x - ref) / ref_norm))
    running_min = list(errors)

    residuals: list[float] = []
    best_x, best_k = x.copy(), 0
    best_res = np.inf
    reason = "max_iters"
    k = 0
    w = cfg.stagnation_window
    for k in range(1, cfg.max_iters + 1):
        y = x + (k - 2) / (k + 1) * (x - x_prev) if cfg.nesterov and k > 1 else x
        r = fwd(y) - g
        rn = float(np.linalg.norm(r))
        residuals.append(rn)
        if rn <= 1e-14 * max(gnorm, 1e-300):
            reason = "residual_zero"
            k -= 1
            break
        # Accelerated iterates ripple, so they are measured against the
        # initial residual instead of the running minimum.
        best_res = residuals[0] if cfg.nesterov else min(best_res, rn)
        if rn > cfg.divergence_factor * best_res:
            raise DivergenceDetected(
                f"residual {rn:.3g} exceeds {cfg.divergence_factor}x the reference {best_res:.3g} "
                f"at iteration {k}; reduce omega")
        x_prev, x = x, y - cfg.omega * adj(r)
        if ref is not None:
            err = float(np.linalg.norm(x - ref) / ref_norm)
            errors.append(err)
            if err < errors[best_k]:
                best_x, best_k = x.copy(), len(errors) - 1
            if err < cfg.oracle_stop_tol:
                reason = "oracle"
                break
            running_min.append(min(running_min[-1], err))
            if len(errors) > w and running_min[-1 - w] - running_min[-1] < cfg.stagnation_tol:
                reason = "stagnation"
                break
        elif len(residuals) > w and (min(residuals[:-w]) - min(residuals)) / gnorm < cfg.stagnation_tol:
            reason = "stagnation"
            break
    log.info("landweber stopped after %d iterations (%s)", k, reason)
    if ref is None:
        return LandweberResult(as_field(x), k, reason, residuals, errors)
    return LandweberResult(as_field(x), k, reason, residuals, errors, as_field(best_x), best_k)


def add_relative_uniform_noise(data: BoundaryData, delta: float, seed: int = 0) -> BoundaryData:
    """Add i.i.d. uniform noise to every table entry, rescaled so that the
    perturbation has norm ``delta * ||data||``."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    if delta == 0:
        return data.with_values(data.values.copy())
    rng = np.random.default_rng(seed)
    e = rng.uniform(-1.0, 1.0, size=data.values.shape)
    e *= delta * np.linalg.norm(data.values) / np.linalg.norm(e)
    return data.with_values(data.values + e)


def relative_l2_error(f_approx: TensorField, f_exact: TensorField, grid: PolarGrid | None = None) -> float:
    """Plain discrete ``||f_approx - f_exact|| / ||f_exact||`` over nodes and components."""
    den = np.linalg.norm(f_exact.values)
    if den == 0:
        raise ZeroField("exact field has zero norm")
    return float(np.linalg.norm(f_approx.values - f_exact.values) / den)
