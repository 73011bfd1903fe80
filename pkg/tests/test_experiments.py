import csv
import json

import numpy as np
import pytest

from geotomo.experiments import (EXPERIMENTS, OperatorCache, UnknownPhantom, default_spec, load_config,
                                 phantom, phantom_field, run_experiment, run_table1, run_table3)
from geotomo.grid import PolarGrid, read_field_csv


def write_ini(path, experiment, recon="max_iters = 80\n"):
    path.write_text("[experiment]\n" + experiment + "[recon]\n" + recon)
    return path


def test_phantom_examples():
    assert np.allclose(phantom("f1", [1.0, 0.0]), [1.0, 1.0])
    assert np.allclose(phantom("f2", [0.0, 0.0]), [0.0, 0.0])
    assert np.allclose(phantom("f3", [0.3, -0.4]), [0.3, 0.4])
    with pytest.raises(UnknownPhantom):
        phantom("f9", [0.0, 0.0])
    with pytest.raises(ValueError):
        phantom("f1", [1.0, 1.0])
    f = phantom_field("f2", PolarGrid(4, 8, 8))
    assert f.values.shape == (4, 8, 2)


def test_default_specs():
    assert set(EXPERIMENTS) == {"table1", "table3", "table4", "fig-errdual", "fig-noise", "table-time"}
    t1 = default_spec("table1")
    assert len(t1.grids) == 8 and all(g[1] == g[2] for g in t1.grids)
    assert (34, 106, 106) in t1.grids and t1.alphas == [0.0, 0.1, 0.2, 0.3, 0.4]
    t3 = default_spec("table3")
    assert [g[2] for g in t3.grids][-1] == 106
    with pytest.raises(KeyError):
        default_spec("table9")


def test_load_config(tmp_path):
    ini = write_ini(tmp_path / "c.ini",
                    "grids = 6x20x20, 8x26x13\nalphas = 0, 0.1\nnoise = 0.01@7, 0.02\nphantom = f2\n",
                    "omega = 0.05\nnesterov = yes\nmax_iters = 12\n")
    spec = load_config(ini, default_spec("table1"))
    assert spec.grids == [(6, 20, 20), (8, 26, 13)]
    assert spec.alphas == [0.0, 0.1]
    assert spec.noise == [(0.01, 7), (0.02, 0)]
    assert spec.phantom == "f2"
    assert spec.recon.omega == 0.05 and spec.recon.nesterov and spec.recon.max_iters == 12
    bad = write_ini(tmp_path / "bad.ini", "colour = blue\n")
    with pytest.raises(KeyError):
        load_config(bad, spec)
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.ini", spec)


def test_small_table_run_writes_outputs(tmp_path):
    ini = write_ini(tmp_path / "s.ini", "grids = 6x20x20, 8x26x26\nalphas = 0, 0.1\n")
    out = tmp_path / "out"
    result = run_experiment("table1", out, config=ini)
    assert len(result.rows) == 4
    rows = list(csv.DictReader(open(out / "table1.csv")))
    assert [r["R"] for r in rows] == ["6", "6", "8", "8"]
    assert float(rows[0]["error"]) == result.rows[0]["error"]
    meta = json.loads((out / "table1_meta.json").read_text())
    assert meta["spec"]["grids"] == [[6, 20, 20], [8, 26, 26]]
    assert meta["threads"] == 1 and "commit" in meta
    assert "table1_error.png" in meta["files"]
    assert (out / "table1_error.png").stat().st_size > 0


def test_noise_run_writes_fields(tmp_path):
    ini = write_ini(tmp_path / "n.ini", "grids = 6x20x20\nnoise = 0@0, 0.1@0\n")
    out = tmp_path / "out"
    result = run_experiment("fig-noise", out, config=ini, seed=5, figures=False)
    assert [r["seed"] for r in result.rows] == [5, 5]
    f = read_field_csv(out / "fig-noise_field_delta0.1.csv")
    assert np.allclose(f.values, result.fields["delta0.1"].values)
    assert not list(out.glob("*.png"))


def test_seed_reproducibility(tmp_path):
    ini = write_ini(tmp_path / "n.ini", "grids = 6x20x20\nnoise = 0.05@0\n")
    a = run_experiment("fig-noise", config=ini, seed=3).rows[0]["error"]
    b = run_experiment("fig-noise", config=ini, seed=3).rows[0]["error"]
    c = run_experiment("fig-noise", config=ini, seed=4).rows[0]["error"]
    assert a == b and a != c


def test_threads_do_not_change_results(tmp_path):
    ini = write_ini(tmp_path / "t.ini", "grids = 6x20x20, 8x26x26\nalphas = 0, 0.2\n")
    one = run_experiment("table1", config=ini, threads=1)
    two = run_experiment("table1", config=ini, threads=2)
    key = ["R", "P", "Q", "alpha", "error", "iterations"]
    assert [[r[k] for k in key] for r in one.rows] == [[r[k] for k in key] for r in two.rows]


def test_shared_cells_agree_between_tables(tmp_path):
    spec1 = load_config(write_ini(tmp_path / "a.ini", "grids = 8x26x26\nalphas = 0\n"), default_spec("table1"))
    spec3 = load_config(write_ini(tmp_path / "b.ini", "grids = 8x26x13, 8x26x26\nalphas = 0\n"),
                        default_spec("table3"))
    cache = OperatorCache()
    t1 = run_table1(spec1, cache=cache)
    t3 = run_table3(spec3, cache=OperatorCache())
    assert t1.value("error", Q=26, alpha=0.0) == t3.value("error", Q=26, alpha=0.0)


def test_errdual_and_timing_small(tmp_path):
    ini = write_ini(tmp_path / "e.ini", "grids = 6x20x20\nepsilons = 0.1, 0\nphantom = f2\n")
    res = run_experiment("fig-errdual", tmp_path / "o", config=ini)
    assert {r["adjoint"] for r in res.rows} == {"integral", "pde"}
    assert (tmp_path / "o" / "fig-errdual_defect.png").exists()
    ini = write_ini(tmp_path / "t.ini", "grids = 6x20x20\nnoise = 0.03@0\n", "max_iters = 20\n")
    res = run_experiment("table-time", config=ini)
    assert [r["adjoint"] for r in res.rows] == ["integral", "pde"]
    assert "pde_slower_by_10x" in res.checks
