"""Conformal metric ``g = n^2 I`` on the unit disc and geodesic tracing."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

FD_STEP = 1e-6


class GeometryError(RuntimeError):
    pass


class MaxStepsExceeded(GeometryError):
    """A geodesic did not leave the disc within the step budget (trapped ray)."""


class NoIntersection(GeometryError):
    """The last geodesic segment does not cross the unit circle."""


@dataclass(frozen=True)
class RefractiveMedium:
    """Refractive index ``n``, its gradient and the attenuation ``alpha``.

    ``n`` and ``grad_n`` act on arrays of positions with shape ``(..., 2)``.
    ``alpha`` is either a constant or a callable ``alpha(x, xi)`` on phase
    space. Without ``grad_n`` the gradient falls back to central differences.
    """

    n: Callable[[np.ndarray], np.ndarray]
    grad_n: Callable[[np.ndarray], np.ndarray] | None = None
    alpha: float | Callable[[np.ndarray, np.ndarray], np.ndarray] = 0.0
    c_n: float = 1.0
    alpha_0: float = 0.0
    name: str = "custom"
    euclidean: bool = False

    def index(self, x) -> np.ndarray:
        return np.asarray(self.n(np.asarray(x, dtype=float)), dtype=float)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.grad_n is not None:
            return np.asarray(self.grad_n(x), dtype=float)
        e1 = np.array([FD_STEP, 0.0])
        e2 = np.array([0.0, FD_STEP])
        d1 = (self.n(x + e1) - self.n(x - e1)) / (2 * FD_STEP)
        d2 = (self.n(x + e2) - self.n(x - e2)) / (2 * FD_STEP)
        return np.stack([d1, d2], axis=-1)

    def attenuation(self, x, xi) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if callable(self.alpha):
            return np.asarray(self.alpha(x, np.asarray(xi, dtype=float)), dtype=float)
        return np.full(x.shape[:-1], float(self.alpha))

    @property
    def constant_alpha(self) -> float | None:
        return None if callable(self.alpha) else float(self.alpha)

    def with_alpha(self, alpha0: float) -> RefractiveMedium:
        return RefractiveMedium(self.n, self.grad_n, alpha0, self.c_n, alpha0, self.name, self.euclidean)


def _quadratic_medium(offset: float, coeff: float, name: str, alpha0: float) -> RefractiveMedium:
    return RefractiveMedium(
        n=lambda x: offset + coeff * np.sum(x * x, axis=-1),
        grad_n=lambda x: 2.0 * coeff * x,
        alpha=alpha0,
        c_n=offset,
        alpha_0=alpha0,
        name=name,
    )


MEDIA = ("euclid", "paper-slow", "paper-mild")


def builtin_medium(name: str, alpha0: float = 0.0) -> RefractiveMedium:
    """``euclid`` (n = 1), ``paper-slow`` (n = 4/3 + 0.002|x|^2) or
    ``paper-mild`` (n = 1 + 0.002|x|^2), with constant attenuation ``alpha0``."""
    if name == "euclid":
        return RefractiveMedium(
            n=lambda x: np.ones(np.shape(x)[:-1]),
            grad_n=lambda x: np.zeros(np.shape(x)),
            alpha=alpha0, c_n=1.0, alpha_0=alpha0, name=name, euclidean=True,
        )
    if name == "paper-slow":
        return _quadratic_medium(4.0 / 3.0, 0.002, name, alpha0)
    if name == "paper-mild":
        return _quadratic_medium(1.0, 0.002, name, alpha0)
    raise ValueError(f"unknown medium {name!r}; choose from {MEDIA}")


def christoffel(medium: RefractiveMedium, x) -> np.ndarray:
    """Symbols ``G[k, i, j]`` of ``g = n^2 I`` at a single point ``x``."""
    x = np.asarray(x, dtype=float)
    n = float(medium.index(x))
    dn = medium.gradient(x)
    delta = np.eye(2)
    return (np.einsum("j,ik->kij", dn, delta)
            + np.einsum("i,jk->kij", dn, delta)
            - np.einsum("k,ij->kij", dn, delta)) / n


def _acceleration(medium: RefractiveMedium, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    # -G^k_ij v^i v^j = -(2 <grad n, v> v - |v|^2 grad n) / n
    n = medium.index(x)
    dn = medium.gradient(x)
    dv = np.sum(dn * v, axis=-1)
    vv = np.sum(v * v, axis=-1)
    return -(2.0 * dv[:, None] * v - vv[:, None] * dn) / n[:, None]


def _rk4_step(medium, x, v, h):
    if medium.euclidean:
        return x + h * v, v
    k1x, k1v = v, _acceleration(medium, x, v)
    k2x = v + 0.5 * h * k1v
    k2v = _acceleration(medium, x + 0.5 * h * k1x, k2x)
    k3x = v + 0.5 * h * k2v
    k3v = _acceleration(medium, x + 0.5 * h * k2x, k3x)
    k4x = v + h * k3v
    k4v = _acceleration(medium, x + h * k3x, k4x)
    x_new = x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    v_new = v + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return x_new, v_new


def g_normalize(medium: RefractiveMedium, x, xi) -> np.ndarray:
    """Scale tangent vectors to unit length in the metric (``n |xi| = 1``)."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    norm = medium.index(x) * np.linalg.norm(xi, axis=-1)
    return xi / norm[..., None]


@dataclass
class PathBundle:
    """Padded samples of many geodesics traced with a common step.

    ``points[i, s]`` for ``s = 0..S[i]`` hold the RK4 samples of ray ``i``;
    sample ``S[i]`` is the first one outside the disc. ``frac`` is the
    corrected last step as a fraction of ``dtau``.
    """

    points: np.ndarray
    velocities: np.ndarray
    S: np.ndarray
    frac: np.ndarray
    exit_point: np.ndarray
    exit_velocity: np.ndarray
    dtau: float

    @property
    def length(self) -> np.ndarray:
        """Geodesic parameter length ``(S - 1) dtau + dtau_star``."""
        return ((self.S - 1) + self.frac) * self.dtau


def trace_geodesics(medium: RefractiveMedium, x0, xi0, dtau: float, backward: bool = False,
                    max_steps: int | None = None, normalize: bool = True) -> PathBundle:
    """RK4-integrate many geodesics until each first leaves the unit disc."""
    if dtau <= 0:
        raise ValueError("dtau must be positive")
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    xi0 = np.atleast_2d(np.asarray(xi0, dtype=float))
    if np.any(np.sum(x0 * x0, axis=-1) > 1.0 + 1e-12):
        raise ValueError("start point outside the unit disc")
    if np.any(np.linalg.norm(xi0, axis=-1) == 0):
        raise ValueError("zero initial tangent")
    v0 = g_normalize(medium, x0, xi0) if normalize else xi0.copy()
    if max_steps is None:
        max_steps = math.ceil(20.0 / dtau)
    h = -dtau if backward else dtau
    N = len(x0)

    pts = [x0.copy()]
    vels = [v0.copy()]
    S = np.full(N, -1, dtype=np.int64)
    active = np.arange(N)
    x, v = x0, v0
    for step in range(1, max_steps + 1):
        x, v = _rk4_step(medium, x, v, h)
        X = np.full((N, 2), np.nan)
        V = np.full((N, 2), np.nan)
        X[active] = x
        V[active] = v
        pts.append(X)
        vels.append(V)
        out = np.sum(x * x, axis=-1) > 1.0
        S[active[out]] = step
        keep = ~out
        active, x, v = active[keep], x[keep], v[keep]
        if active.size == 0:
            break
    else:
        raise MaxStepsExceeded(f"{active.size} geodesic(s) still inside after {max_steps} steps")

    points = np.stack(pts, axis=1)
    velocities = np.stack(vels, axis=1)
    rows = np.arange(N)
    a, b = points[rows, S - 1], points[rows, S]
    d = b - a
    A = np.sum(d * d, axis=-1)
    B = np.sum(a * d, axis=-1)
    C = np.minimum(np.sum(a * a, axis=-1) - 1.0, 0.0)
    # same rounding guard as in tau_plus_euclid for starts on the circle
    C = np.where(np.abs(C) < 1e-12, 0.0, C)
    disc = np.maximum(B * B - A * C, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(A > 0, (-B + np.sqrt(disc)) / np.where(A > 0, A, 1.0), 0.0)
    if np.any((t < -1e-12) | (t > 1.0 + 1e-12)):
        raise NoIntersection("last segment does not cross the unit circle; reduce dtau")
    t = np.clip(t, 0.0, 1.0)
    exit_point = a + t[:, None] * d
    exit_point /= np.linalg.norm(exit_point, axis=-1, keepdims=True)
    va, vb = velocities[rows, S - 1], velocities[rows, S]
    exit_velocity = va + t[:, None] * (vb - va)
    return PathBundle(points, velocities, S, t, exit_point, exit_velocity, dtau)


@dataclass
class GeodesicPath:
    points: np.ndarray
    velocities: np.ndarray
    dtau: float
    dtau_star: float
    exit_point: np.ndarray
    exit_velocity: np.ndarray

    @property
    def length(self) -> float:
        return (len(self.points) - 2) * self.dtau + self.dtau_star


def geodesic_trace(medium: RefractiveMedium, x0, xi0, dtau: float, direction: str = "forward",
                   max_steps: int | None = None) -> GeodesicPath:
    """Trace one geodesic from ``(x0, xi0)``; ``xi0`` is rescaled to unit g-length."""
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    b = trace_geodesics(medium, np.asarray(x0)[None], np.asarray(xi0)[None], dtau,
                        backward=direction == "backward", max_steps=max_steps)
    S = int(b.S[0])
    return GeodesicPath(
        points=b.points[0, :S + 1].copy(),
        velocities=b.velocities[0, :S + 1].copy(),
        dtau=dtau,
        dtau_star=float(b.frac[0] * dtau),
        exit_point=b.exit_point[0],
        exit_velocity=b.exit_velocity[0],
    )


def tau_minus_euclid(x, xi):
    """Entry parameter ``-2 <x, xi>`` for outgoing boundary pairs (``n = 1``)."""
    ip = np.sum(np.asarray(x, dtype=float) * np.asarray(xi, dtype=float), axis=-1)
    if np.any(ip < -1e-12):
        raise ValueError("(x, xi) is not an outgoing boundary pair")
    return -2.0 * ip


def tau_plus_euclid(x, xi):
    """Exit parameter of the chord from ``x`` in direction ``xi`` (``n = 1``)."""
    x = np.asarray(x, dtype=float)
    ip = np.sum(x * np.asarray(xi, dtype=float), axis=-1)
    gap = 1.0 - np.sum(x * x, axis=-1)
    # on the circle the rounding residue of 1 - |x|^2 would survive the
    # square root as a spurious ~1e-8 chord for tangent directions
    gap = np.where(np.abs(gap) < 1e-12, 0.0, gap)
    disc = np.maximum(ip * ip + gap, 0.0)
    return -ip + np.sqrt(disc)


def check_slow_variation(medium: RefractiveMedium, grid=None) -> tuple[bool, float]:
    """Diagnostic ``sup |grad n| / n < alpha_0`` over the polar nodes and origin."""
    from .grid import PolarGrid

    grid = grid or PolarGrid(34, 106, 106)
    pts = np.vstack([grid.nodes().reshape(-1, 2), np.zeros((1, 2))])
    ratio = np.linalg.norm(medium.gradient(pts), axis=-1) / medium.index(pts)
    sup = float(ratio.max())
    return sup < medium.alpha_0, sup
