"""Figures for experiment results (matplotlib, file output only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .grid import TensorField  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
    "savefig.dpi": 150,
}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_error_table(result, x: str, series: str, path: Path, logy: bool = True) -> Path:
    """One line per value of ``series``, error against ``x``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        keys = sorted({tuple(r[s] for s in series.split(",")) for r in result.rows})
        for key in keys:
            rows = [r for r in result.rows if tuple(r[s] for s in series.split(",")) == key]
            rows.sort(key=lambda r: r[x])
            ax.plot([r[x] for r in rows], [r["error"] for r in rows], marker="o",
                    label=" ".join(str(k) for k in key))
        ax.set_xlabel(x)
        ax.set_ylabel("relative L2 error")
        if logy:
            ax.set_yscale("log")
        ax.legend(fontsize=7, title=series)
        return _save(fig, path)


def plot_defects(result, path: Path) -> Path:
    """Duality defect of the PDE adjoint over epsilon, with the
    ``epsilon = 0`` and integral levels as horizontal lines."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        pde = sorted((r["epsilon"], r["defect"]) for r in result.rows
                     if r["adjoint"] == "pde" and r["epsilon"] > 0)
        if pde:
            ax.loglog(*zip(*pde), "o-", color="tab:blue", label="PDE, eps > 0")
        for r in result.rows:
            if r["adjoint"] == "pde" and r["epsilon"] == 0:
                ax.axhline(r["defect"], color="tab:red", label="PDE, eps = 0")
            if r["adjoint"] == "integral":
                ax.axhline(r["defect"], color="tab:green", label="integral")
        ax.set_xlabel("epsilon")
        ax.set_ylabel("duality defect")
        ax.legend()
        return _save(fig, path)


def plot_field(field: TensorField, path: Path, title: str = "") -> Path:
    """Both components of a vector field on the polar nodes."""
    x = field.grid.nodes().reshape(-1, 2)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.6))
        for k, ax in enumerate(axes):
            tpc = ax.tripcolor(x[:, 0], x[:, 1], field.values[..., k].ravel(), shading="gouraud",
                               cmap="viridis")
            ax.set_aspect("equal")
            ax.set_title(f"{title} component {k + 1}".strip())
            fig.colorbar(tpc, ax=ax, shrink=0.8)
        return _save(fig, path)


def render(result, out_dir) -> list[Path]:
    """Write the figures that fit a result's shape; returns the paths."""
    out = Path(out_dir)
    name = result.name
    paths = []
    cols = set(result.columns)
    if "defect" in cols:
        paths.append(plot_defects(result, out / f"{name}_defect.png"))
    elif {"R", "P", "Q", "alpha"} <= cols:
        qs = {r["Q"] for r in result.rows}
        rps = {(r["R"], r["P"]) for r in result.rows}
        if len(rps) == 1 and len(qs) > 1:
            paths.append(plot_error_table(result, "Q", "alpha", out / f"{name}_error.png"))
        else:
            paths.append(plot_error_table(result, "alpha", "R,P", out / f"{name}_error.png"))
    elif "refraction" in cols:
        paths.append(plot_error_table(result, "alpha", "delta,refraction", out / f"{name}_error.png"))
    for tag, fld in result.fields.items():
        if fld is not None and fld.rank == 1:
            paths.append(plot_field(fld, out / f"{name}_field_{tag}.png", tag))
    return paths


def error_curve(errors, path: Path, title: str = "") -> Path:
    """Oracle error against the iteration index."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.semilogy(np.arange(len(errors)), errors)
        ax.set_xlabel("iteration")
        ax.set_ylabel("relative L2 error")
        if title:
            ax.set_title(title)
        return _save(fig, path)
