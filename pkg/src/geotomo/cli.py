"""Command line interface: ``geotomo forward|adjoint|reconstruct|run``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .adjoint import DENOMINATORS, adjoint_operator
from .experiments import (EXPERIMENTS, PHANTOMS, OperatorCache, phantom_field, reconstruct,
                          run_experiment)
from .forward import forward_operator
from .geometry import MEDIA
from .grid import PolarGrid, read_boundary_csv, read_field_csv, write_boundary_csv, write_field_csv
from .recon import ReconConfig
from .transport import PDEAdjoint, duality_defect


def _grid_args(p):
    p.add_argument("--R", type=int, default=34, help="number of rings (default 34)")
    p.add_argument("--P", type=int, default=106, help="points per ring (default 106)")
    p.add_argument("--Q", type=int, default=106, help="number of directions (default 106)")


def _model_args(p):
    p.add_argument("--medium", choices=MEDIA, default="euclid")
    p.add_argument("--alpha", type=float, default=0.0, help="constant attenuation alpha0")
    p.add_argument("--T", type=int, default=200, help="chord subintervals for n = 1")
    p.add_argument("--dtau", type=float, default=0.01, help="geodesic step for variable n")


def _field_source(args, grid):
    if args.field:
        return read_field_csv(args.field)
    return phantom_field(args.phantom, grid)


def cmd_forward(args):
    grid = PolarGrid(args.R, args.P, args.Q)
    f = _field_source(args, grid)
    data = forward_operator(f.grid, args.medium, args.alpha, args.T, args.dtau, f.rank)(f)
    write_boundary_csv(data, args.out)
    print(f"wrote {args.out}")


def cmd_adjoint(args):
    grid = PolarGrid(args.R, args.P, args.Q)
    if args.method == "pde" and args.medium != "euclid":
        sys.exit("the PDE adjoint is available for --medium euclid only")
    if args.data:
        data = read_boundary_csv(args.data)
        grid = data.grid
    else:
        data = forward_operator(grid, args.medium, args.alpha, args.T, args.dtau)(phantom_field(args.phantom, grid))
    if args.method == "pde":
        op = PDEAdjoint(grid, args.alpha, args.epsilon)
    else:
        op = adjoint_operator(grid, args.medium, args.alpha, args.dtau, 1, args.denominator)
    if args.out:
        write_field_csv(op(data), args.out)
        print(f"wrote {args.out}")
    if args.defect_csv:
        if args.medium != "euclid":
            sys.exit("--defect-csv is available for --medium euclid only")
        f = phantom_field(args.phantom, grid)
        fwd = forward_operator(grid, "euclid", args.alpha, args.T)
        d = duality_defect(f, args.method, grid, args.alpha, args.epsilon, forward=fwd, adjoint=op)
        with open(args.defect_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "epsilon", "defect"])
            w.writerow([args.method, args.epsilon if args.method == "pde" else "", repr(d)])
        print(f"defect {d:.6g}; wrote {args.defect_csv}")


def cmd_reconstruct(args):
    grid = PolarGrid(args.R, args.P, args.Q)
    cfg = ReconConfig(omega=args.omega, max_iters=args.max_iters, nesterov=args.nesterov,
                      adjoint_kind=args.method)
    res, sec = reconstruct(grid, args.phantom, args.medium, args.alpha, args.delta, args.seed, cfg,
                           model_medium=args.model_medium, T=args.T, dtau=args.dtau,
                           epsilon=args.epsilon, cache=OperatorCache())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{args.name}_errors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "error", "residual"])
        for k, e in enumerate(res.errors):
            w.writerow([k, repr(e), repr(res.residuals[k]) if k < len(res.residuals) else ""])
    write_field_csv(res.best_field, out / f"{args.name}_field_best.csv")
    write_field_csv(res.field, out / f"{args.name}_field_final.csv")
    summary = {"best_error": res.best_error, "best_iteration": res.best_iteration,
               "final_error": res.final_error, "iterations": res.iterations,
               "stop_reason": res.stop_reason, "seconds": sec}
    (out / f"{args.name}_meta.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))


def cmd_run(args):
    result = run_experiment(args.experiment, args.out, args.threads, args.seed, args.config,
                            figures=not args.no_figures)
    for row in result.rows:
        print(", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    for name, ok in result.checks.items():
        print(f"check {name}: {'PASS' if ok else 'FAIL'}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geotomo", description="Attenuated ray transform tomography "
                                     "of vector fields on the unit disc with refraction.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forward", help="compute boundary data of a field")
    _grid_args(p)
    _model_args(p)
    p.add_argument("--phantom", choices=sorted(PHANTOMS), default="f1")
    p.add_argument("--field", help="field CSV to use instead of a phantom")
    p.add_argument("--out", default="data.csv")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("adjoint", help="apply the adjoint to boundary data")
    _grid_args(p)
    _model_args(p)
    p.add_argument("--method", choices=["integral", "pde"], default="integral")
    p.add_argument("--epsilon", type=float, default=0.0, help="viscosity for --method pde")
    p.add_argument("--denominator", choices=DENOMINATORS, default="santalo")
    p.add_argument("--data", help="boundary CSV (default: forward data of --phantom)")
    p.add_argument("--phantom", choices=sorted(PHANTOMS), default="f2")
    p.add_argument("--out", help="field CSV for the backprojection")
    p.add_argument("--defect-csv", help="write the duality defect on --phantom to this CSV")
    p.set_defaults(func=cmd_adjoint)

    p = sub.add_parser("reconstruct", help="Landweber reconstruction of a phantom")
    _grid_args(p)
    _model_args(p)
    p.add_argument("--phantom", choices=sorted(PHANTOMS), default="f1")
    p.add_argument("--model-medium", choices=MEDIA, help="medium assumed by the reconstruction")
    p.add_argument("--delta", type=float, default=0.0, help="relative noise level")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--omega", type=float, default=0.1)
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--method", choices=["integral", "pde"], default="integral")
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--nesterov", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--name", default="recon")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("run", help="run a named experiment")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--out", default="out")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="INI file overriding the experiment spec")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
