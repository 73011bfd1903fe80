"""Phantoms, experiment definitions and the table/figure harness.

Every experiment is a set of independent cells (one reconstruction or one
duality check each). Cells run in a bounded thread pool and are merged by
key, so the output order never depends on scheduling. Operators are built
once per (grid, medium, attenuation, kind) and shared between cells.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import logging
import math
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adjoint import EuclideanBackprojection, GeodesicBackprojection
from .forward import EuclideanRayTransform, GeodesicRayTransform
from .geometry import MEDIA, builtin_medium
from .grid import PolarGrid, TensorField, write_field_csv
from .recon import ReconConfig, add_relative_uniform_noise, landweber
from .transport import PDEAdjoint, duality_defect

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# phantoms
# ---------------------------------------------------------------------------

class UnknownPhantom(KeyError):
    pass


def _f1(x1, x2):
    return x1 + x2, x1 - x2


def _f2(x1, x2):
    return x1**2 - 2.0 * x2**2, -2.0 * x1 * x2


def _f3(x1, x2):
    return x1, -x2


PHANTOMS = {"f1": _f1, "f2": _f2, "f3": _f3}


def phantom(name: str, x) -> np.ndarray:
    """Evaluate a named vector phantom at positions ``x`` of shape ``(..., 2)``."""
    try:
        func = PHANTOMS[name]
    except KeyError:
        raise UnknownPhantom(f"unknown phantom {name!r}; choose from {sorted(PHANTOMS)}") from None
    x = np.asarray(x, dtype=float)
    if np.any(np.sum(x * x, axis=-1) > 1.0 + 1e-12):
        raise ValueError("phantoms are defined on the closed unit disc")
    return np.stack(np.broadcast_arrays(*func(x[..., 0], x[..., 1])), axis=-1)


def phantom_field(name: str, grid: PolarGrid) -> TensorField:
    if name not in PHANTOMS:
        raise UnknownPhantom(f"unknown phantom {name!r}; choose from {sorted(PHANTOMS)}")
    return TensorField.from_function(grid, PHANTOMS[name], rank=1)


# ---------------------------------------------------------------------------
# experiment definitions and config files
# ---------------------------------------------------------------------------

TABLE1_GRIDS = [(20, 180, 180), (30, 120, 120), (34, 106, 106), (40, 90, 90),
                (60, 60, 60), (90, 40, 40), (120, 30, 30), (180, 20, 20)]
TABLE3_Q = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 106]
HEADLINE = (34, 106, 106)


@dataclass
class ExperimentSpec:
    """Everything needed to rerun one experiment.

    ``noise`` lists ``(delta, seed)`` pairs. ``epsilons`` is only used by
    the duality sweep, ``adjoints`` by the run-time comparison.
    """

    name: str
    phantom: str = "f1"
    medium: str = "euclid"
    alphas: list[float] = field(default_factory=lambda: [0.0])
    grids: list[tuple[int, int, int]] = field(default_factory=lambda: [HEADLINE])
    noise: list[tuple[float, int]] = field(default_factory=lambda: [(0.0, 0)])
    recon: ReconConfig = field(default_factory=ReconConfig)
    T: int = 200
    dtau: float = 0.01
    epsilons: list[float] = field(default_factory=lambda: [0.1, 0.01, 1e-3, 1e-4, 0.0])
    adjoints: list[str] = field(default_factory=lambda: ["integral"])

    def __post_init__(self):
        if self.phantom not in PHANTOMS:
            raise UnknownPhantom(f"unknown phantom {self.phantom!r}")
        if self.medium not in MEDIA:
            raise ValueError(f"unknown medium {self.medium!r}; choose from {MEDIA}")
        self.grids = [tuple(int(v) for v in g) for g in self.grids]
        for g in self.grids:
            PolarGrid(*g)
        self.noise = [(float(d), int(s)) for d, s in self.noise]

    def with_seed(self, seed: int) -> ExperimentSpec:
        return dataclasses.replace(self, noise=[(d, seed) for d, _ in self.noise])


def default_spec(name: str) -> ExperimentSpec:
    """The built-in experiments, named after the tables/figures they reproduce."""
    if name == "table1":
        return ExperimentSpec(name, "f1", "euclid", [0.0, 0.1, 0.2, 0.3, 0.4], list(TABLE1_GRIDS))
    if name == "table3":
        return ExperimentSpec(name, "f1", "euclid", [0.0, 0.1, 0.2, 0.3, 0.4],
                              [(34, 106, q) for q in TABLE3_Q])
    if name == "table4":
        return ExperimentSpec(name, "f3", "paper-mild", [0.01, 0.02], [HEADLINE],
                              [(0.0, 0), (0.01, 0)], ReconConfig(omega=0.01, nesterov=True))
    if name == "fig-errdual":
        return ExperimentSpec(name, "f2", "euclid", [0.0], [HEADLINE])
    if name == "fig-noise":
        return ExperimentSpec(name, "f2", "euclid", [0.0], [HEADLINE], [(0.0, 0), (0.1, 0), (0.2, 0)])
    if name == "table-time":
        return ExperimentSpec(name, "f2", "euclid", [0.0], [HEADLINE], [(0.03, 0), (0.1, 0)],
                              adjoints=["integral", "pde"], epsilons=[0.0])
    raise KeyError(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _grids(text: str) -> list[tuple[int, int, int]]:
    out = []
    for item in text.replace(";", ",").split(","):
        item = item.strip()
        if item:
            parts = [int(v) for v in item.lower().split("x")]
            if len(parts) != 3:
                raise ValueError(f"grid {item!r} must be written RxPxQ")
            out.append(tuple(parts))
    return out


def _noise(text: str) -> list[tuple[float, int]]:
    out = []
    for item in text.replace(";", ",").split(","):
        item = item.strip()
        if item:
            delta, _, seed = item.partition("@")
            out.append((float(delta), int(seed or 0)))
    return out


_SPEC_PARSERS = {
    "phantom": str, "medium": str, "alphas": _floats, "grids": _grids, "noise": _noise,
    "T": int, "dtau": float, "epsilons": _floats,
    "adjoints": lambda s: [v.strip() for v in s.split(",") if v.strip()],
}


def load_config(path, spec: ExperimentSpec) -> ExperimentSpec:
    """Override fields of ``spec`` from an INI file.

    ``[experiment]`` accepts ``phantom``, ``medium``, ``alphas`` (comma list),
    ``grids`` (``RxPxQ`` comma list), ``noise`` (``delta@seed`` comma list),
    ``T``, ``dtau``, ``epsilons`` and ``adjoints``. ``[recon]`` accepts the
    fields of :class:`ReconConfig`.
    """
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if not cp.read(path):
        raise FileNotFoundError(path)
    changes = {}
    if cp.has_section("experiment"):
        for key, raw in cp.items("experiment"):
            if key not in _SPEC_PARSERS:
                raise KeyError(f"unknown [experiment] key {key!r}")
            changes[key] = _SPEC_PARSERS[key](raw)
    if cp.has_section("recon"):
        rc = {}
        types = {f.name: f.type for f in dataclasses.fields(ReconConfig)}
        for key in cp.options("recon"):
            if key not in types:
                raise KeyError(f"unknown [recon] key {key!r}")
            if key == "nesterov":
                rc[key] = cp.getboolean("recon", key)
            elif key in ("max_iters", "stagnation_window"):
                rc[key] = cp.getint("recon", key)
            elif key == "adjoint_kind":
                rc[key] = cp.get("recon", key)
            else:
                rc[key] = cp.getfloat("recon", key)
        changes["recon"] = dataclasses.replace(spec.recon, **rc)
    return dataclasses.replace(spec, **changes)


# ---------------------------------------------------------------------------
# shared operators
# ---------------------------------------------------------------------------

class OperatorCache:
    """Thread-safe memo of assembled operators."""

    def __init__(self):
        self._store = {}
        self._locks = {}
        self._guard = threading.Lock()

    def get(self, key, build):
        with self._guard:
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            if key not in self._store:
                self._store[key] = build()
            return self._store[key]

    def forward(self, grid, medium, alpha, T=200, dtau=0.01):
        def build():
            if medium == "euclid":
                return EuclideanRayTransform(grid, alpha, T)
            return GeodesicRayTransform(grid, builtin_medium(medium, alpha), dtau)
        return self.get(("fwd", grid, medium, alpha, T, dtau), build)

    def adjoint(self, grid, medium, alpha, kind="integral", epsilon=0.0, dtau=0.01):
        def build():
            if kind == "pde":
                if medium != "euclid":
                    raise ValueError("the PDE adjoint is available for n = 1 only")
                return PDEAdjoint(grid, alpha, epsilon)
            if medium == "euclid":
                return EuclideanBackprojection(grid, alpha)
            return GeodesicBackprojection(grid, builtin_medium(medium, alpha), dtau=dtau)
        key = ("adj", grid, medium, alpha, kind, epsilon if kind == "pde" else None, dtau)
        return self.get(key, build)


# ---------------------------------------------------------------------------
# cells
# ---------------------------------------------------------------------------

@dataclass
class CellResult:
    key: tuple
    row: dict
    field: TensorField | None = None


@dataclass
class ExperimentResult:
    name: str
    columns: list[str]
    rows: list[dict]
    fields: dict[str, TensorField] = field(default_factory=dict)
    checks: dict[str, bool] = field(default_factory=dict)

    def column(self, name, **where):
        return [r[name] for r in self.rows if all(r[k] == v for k, v in where.items())]

    def value(self, name, **where):
        vals = self.column(name, **where)
        if len(vals) != 1:
            raise KeyError(f"{len(vals)} rows match {where}")
        return vals[0]


def reconstruct(grid: PolarGrid, phantom_name: str, data_medium: str, alpha: float, delta: float,
                seed: int, recon: ReconConfig, model_medium: str | None = None, T: int = 200,
                dtau: float = 0.01, epsilon: float = 0.0, cache: OperatorCache | None = None):
    """Simulate data with ``data_medium`` and reconstruct with ``model_medium``.

    Returns ``(LandweberResult, seconds)``; the time covers operator
    assembly (unless cached) and the iteration.
    """
    cache = cache or OperatorCache()
    model_medium = model_medium or data_medium
    f = phantom_field(phantom_name, grid)
    g = cache.forward(grid, data_medium, alpha, T, dtau)(f)
    gd = add_relative_uniform_noise(g, delta, seed)
    t0 = time.perf_counter()
    A = cache.forward(grid, model_medium, alpha, T, dtau)
    B = cache.adjoint(grid, model_medium, alpha, recon.adjoint_kind, epsilon, dtau)
    res = landweber(gd, A, B, recon, f_exact=f)
    return res, time.perf_counter() - t0


def _recon_row(res, seconds, **key):
    return dict(key, error=res.best_error, final_error=res.final_error,
                best_iteration=res.best_iteration, iterations=res.iterations,
                stop_reason=res.stop_reason, seconds=round(seconds, 3))


def _run_cells(jobs, threads: int) -> list[CellResult]:
    if threads <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: job(), jobs))


RECON_COLUMNS = ["error", "final_error", "best_iteration", "iterations", "stop_reason", "seconds"]


def _grid_sweep(spec: ExperimentSpec, threads: int, cache: OperatorCache) -> list[CellResult]:
    delta, seed = spec.noise[0]
    jobs = []
    for R, P, Q in spec.grids:
        for alpha in spec.alphas:
            def job(R=R, P=P, Q=Q, alpha=alpha):
                grid = PolarGrid(R, P, Q)
                res, sec = reconstruct(grid, spec.phantom, spec.medium, alpha, delta, seed, spec.recon,
                                       T=spec.T, dtau=spec.dtau, cache=cache)
                log.info("cell %s alpha=%g error=%.4g", (R, P, Q), alpha, res.best_error)
                return CellResult((R, P, Q, alpha), _recon_row(res, sec, R=R, P=P, Q=Q, alpha=alpha),
                                  res.best_field)
            jobs.append(job)
    return _run_cells(jobs, threads)


def run_table1(spec: ExperimentSpec | None = None, threads: int = 1,
               cache: OperatorCache | None = None) -> ExperimentResult:
    """Error table over the ``(R, P)`` pairs and attenuations."""
    spec = spec or default_spec("table1")
    cells = _grid_sweep(spec, threads, cache or OperatorCache())
    result = ExperimentResult(spec.name, ["R", "P", "Q", "alpha"] + RECON_COLUMNS, [c.row for c in cells])
    if HEADLINE in spec.grids:
        for alpha in spec.alphas:
            col = result.column("error", alpha=alpha)
            head = result.value("error", R=34, P=106, Q=106, alpha=alpha)
            result.checks[f"headline_near_min_alpha_{alpha:g}"] = bool(head <= min(col) + 0.01)
        row = [result.value("error", R=34, P=106, Q=106, alpha=a) for a in sorted(spec.alphas)]
        result.checks["monotone_in_alpha"] = bool(np.all(np.diff(row) > 0))
    return result


def run_table3(spec: ExperimentSpec | None = None, threads: int = 1,
               cache: OperatorCache | None = None) -> ExperimentResult:
    """Error table over the number of directions ``Q`` for ``(R, P) = (34, 106)``."""
    spec = spec or default_spec("table3")
    cells = _grid_sweep(spec, threads, cache or OperatorCache())
    result = ExperimentResult(spec.name, ["R", "P", "Q", "alpha"] + RECON_COLUMNS, [c.row for c in cells])
    qs = [g[2] for g in spec.grids]
    if 106 in qs and 0.0 in spec.alphas:
        col = result.column("error", alpha=0.0)
        result.checks["q106_best_alpha_0"] = bool(result.value("error", Q=106, alpha=0.0) <= min(col))
    if 106 in qs and 30 in qs and 0.2 in spec.alphas:
        gap = abs(result.value("error", Q=30, alpha=0.2) - result.value("error", Q=106, alpha=0.2))
        result.checks["q30_close_to_q106_alpha_0.2"] = bool(gap <= 0.05)
    return result


def run_refraction_comparison(spec: ExperimentSpec | None = None, threads: int = 1,
                              cache: OperatorCache | None = None) -> ExperimentResult:
    """Reconstruct refracted data with and without the refractive model."""
    spec = spec or default_spec("table4")
    cache = cache or OperatorCache()
    grid = PolarGrid(*spec.grids[0])
    jobs = []
    for delta, seed in spec.noise:
        for alpha in spec.alphas:
            for refraction in (False, True):
                def job(delta=delta, seed=seed, alpha=alpha, refraction=refraction):
                    model = spec.medium if refraction else "euclid"
                    res, sec = reconstruct(grid, spec.phantom, spec.medium, alpha, delta, seed, spec.recon,
                                           model_medium=model, T=spec.T, dtau=spec.dtau, cache=cache)
                    tag = "y" if refraction else "n"
                    return CellResult((delta, alpha, tag),
                                      _recon_row(res, sec, delta=delta, alpha=alpha, refraction=tag),
                                      res.best_field)
                jobs.append(job)
    cells = _run_cells(jobs, threads)
    result = ExperimentResult(spec.name, ["delta", "alpha", "refraction"] + RECON_COLUMNS,
                              [c.row for c in cells],
                              {f"delta{c.key[0]:g}_alpha{c.key[1]:g}_{c.key[2]}": c.field for c in cells})
    for delta, _ in spec.noise:
        for alpha in spec.alphas:
            on = result.value("error", delta=delta, alpha=alpha, refraction="y")
            off = result.value("error", delta=delta, alpha=alpha, refraction="n")
            result.checks[f"ratio_ge_3_delta_{delta:g}_alpha_{alpha:g}"] = bool(3.0 * on <= off)
    return result


def run_errdual_sweep(spec: ExperimentSpec | None = None, threads: int = 1,
                      cache: OperatorCache | None = None) -> ExperimentResult:
    """Duality defects of the integral adjoint and the PDE adjoint over epsilon."""
    spec = spec or default_spec("fig-errdual")
    cache = cache or OperatorCache()
    grid = PolarGrid(*spec.grids[0])
    alpha = spec.alphas[0]
    f = phantom_field(spec.phantom, grid)

    def cell(kind, eps):
        def job():
            fwd = cache.forward(grid, "euclid", alpha, spec.T)
            t0 = time.perf_counter()
            adj = cache.adjoint(grid, "euclid", alpha, kind, eps)
            d = duality_defect(f, kind, grid, alpha, eps, forward=fwd, adjoint=adj)
            sec = time.perf_counter() - t0
            return CellResult((kind, eps), dict(adjoint=kind, epsilon="" if kind == "integral" else eps,
                                                defect=d, seconds=round(sec, 3)))
        return job

    jobs = [cell("integral", None)] + [cell("pde", e) for e in spec.epsilons]
    cells = _run_cells(jobs, threads)
    result = ExperimentResult(spec.name, ["adjoint", "epsilon", "defect", "seconds"], [c.row for c in cells])
    integral = result.value("defect", adjoint="integral")
    pde = {c.key[1]: c.row["defect"] for c in cells if c.key[0] == "pde"}
    result.checks["integral_defect_le_0.05"] = bool(integral <= 0.05)
    result.checks["integral_is_minimum"] = bool(all(integral <= d for d in pde.values()))
    positive = sorted(e for e in pde if e > 0)
    if 0.0 in pde and positive:
        seq = [pde[e] for e in positive]
        result.checks["defect_decreases_as_epsilon_shrinks"] = bool(np.all(np.diff(seq) >= 0))
        result.checks["integral_le_pde0_le_pde_max"] = bool(integral <= pde[0.0] <= pde[positive[-1]])
    return result


def run_noise_figure(spec: ExperimentSpec | None = None, threads: int = 1,
                     cache: OperatorCache | None = None) -> ExperimentResult:
    """Reconstructions for several noise levels; fields are kept for plotting."""
    spec = spec or default_spec("fig-noise")
    cache = cache or OperatorCache()
    grid = PolarGrid(*spec.grids[0])
    alpha = spec.alphas[0]
    jobs = []
    for delta, seed in spec.noise:
        def job(delta=delta, seed=seed):
            res, sec = reconstruct(grid, spec.phantom, spec.medium, alpha, delta, seed, spec.recon,
                                   T=spec.T, dtau=spec.dtau, cache=cache)
            return CellResult((delta,), _recon_row(res, sec, delta=delta, seed=seed), res.best_field)
        jobs.append(job)
    cells = _run_cells(jobs, threads)
    result = ExperimentResult(spec.name, ["delta", "seed"] + RECON_COLUMNS, [c.row for c in cells],
                              {f"delta{c.key[0]:g}": c.field for c in cells})
    errs = [c.row["error"] for c in sorted(cells, key=lambda c: c.key)]
    result.checks["ordered_in_delta"] = bool(all(a <= b + 0.01 for a, b in zip(errs, errs[1:])))
    for c in cells:
        if c.key[0] == 0.2:
            result.checks["delta_0.2_below_0.15"] = bool(c.row["error"] < 0.15)
    return result


def run_adjoint_timing(spec: ExperimentSpec | None = None, threads: int = 1,
                       cache: OperatorCache | None = None) -> ExperimentResult:
    """Noisy reconstructions with the integral and the PDE adjoint, timed."""
    spec = spec or default_spec("table-time")
    cache = cache or OperatorCache()
    grid = PolarGrid(*spec.grids[0])
    alpha = spec.alphas[0]
    eps = spec.epsilons[0] if spec.epsilons else 0.0
    rows = []
    for kind in spec.adjoints:
        for delta, seed in spec.noise:
            recon = dataclasses.replace(spec.recon, adjoint_kind=kind)
            res, sec = reconstruct(grid, spec.phantom, spec.medium, alpha, delta, seed, recon,
                                   T=spec.T, epsilon=eps, cache=cache)
            rows.append(_recon_row(res, sec, adjoint=kind, delta=delta))
    result = ExperimentResult(spec.name, ["adjoint", "delta"] + RECON_COLUMNS, rows)
    if {"integral", "pde"} <= set(spec.adjoints):
        t_int = sum(result.column("seconds", adjoint="integral"))
        t_pde = sum(result.column("seconds", adjoint="pde"))
        result.checks["pde_slower_by_10x"] = bool(t_pde >= 10.0 * t_int)
    return result


RUNNERS = {
    "table1": run_table1,
    "table3": run_table3,
    "table4": run_refraction_comparison,
    "fig-errdual": run_errdual_sweep,
    "fig-noise": run_noise_figure,
    "table-time": run_adjoint_timing,
}
EXPERIMENTS = tuple(RUNNERS)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _commit() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {k: _jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_table_csv(result: ExperimentResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=result.columns, extrasaction="ignore")
        writer.writeheader()
        for row in result.rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def write_outputs(result: ExperimentResult, spec: ExperimentSpec, out_dir, seed: int | None = None,
                  threads: int = 1, figures: bool = True) -> list[Path]:
    """Write ``<name>.csv``, ``<name>_field_*.csv``, ``<name>_meta.json`` and figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / f"{result.name}.csv"]
    write_table_csv(result, written[0])
    for tag, fld in result.fields.items():
        if fld is not None:
            path = out / f"{result.name}_field_{tag}.csv"
            write_field_csv(fld, path)
            written.append(path)
    if figures:
        from . import plotting

        written.extend(plotting.render(result, out))
    meta = {
        "name": result.name,
        "spec": _jsonable(spec),
        "seed": seed,
        "threads": threads,
        "commit": _commit(),
        "checks": result.checks,
        "files": [p.name for p in written],
    }
    meta_path = out / f"{result.name}_meta.json"
    meta_path.write_text(json.dumps(meta, indent=2))
    written.append(meta_path)
    return written


def run_experiment(name: str, out_dir=None, threads: int = 1, seed: int | None = None,
                   config=None, figures: bool = True) -> ExperimentResult:
    """Run a named experiment, optionally overriding its spec from a config file."""
    if name not in RUNNERS:
        raise KeyError(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")
    spec = default_spec(name)
    if config is not None:
        spec = load_config(config, spec)
    if seed is not None:
        spec = spec.with_seed(seed)
    result = RUNNERS[name](spec, threads=threads)
    if out_dir is not None:
        write_outputs(result, spec, out_dir, seed, threads, figures)
    return result
