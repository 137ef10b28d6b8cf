"""Command line entry point ``obstacle``.

Exit codes: 0 when every solve converged, 2 when some did not, 3 when the
configuration is invalid (hypotheses, geometry, or the first solution leaves
the small ball).
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import discretize as dz
from .errors import BallViolation, ObstacleError, SolverFailure
from .experiments import SweepConfig, check_instance, run_sweep
from .model import instance_from_config, load_config
from .mountain_pass import solve_mountain_pass
from .vi_solver import oracle_enumerate, solve_min

EXIT_OK, EXIT_PARTIAL, EXIT_INVALID = 0, 2, 3


def _load(path):
    try:
        cfg = load_config(path)
        return cfg, instance_from_config(cfg)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"invalid config {path}: {exc}", file=sys.stderr)
        return None, None


def cmd_validate(args):
    cfg, inst = _load(args.config)
    if inst is None:
        return EXIT_INVALID
    rep = check_instance(inst)
    print("\n".join(rep.lines()))
    return EXIT_OK if rep.passed else EXIT_INVALID


def cmd_solve(args):
    cfg, inst = _load(args.config)
    if inst is None:
        return EXIT_INVALID
    if args.lam is not None:
        inst = inst.with_lambda(args.lam)
    rep = check_instance(inst)
    if not rep.passed:
        print("\n".join(rep.lines()), file=sys.stderr)
        return EXIT_INVALID
    os.makedirs(args.out, exist_ok=True)
    op = dz.assemble(inst, dz.build_mesh(inst))
    try:
        u = solve_min(inst, op)
    except BallViolation as exc:
        print(f"first solution: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SolverFailure as exc:
        print(f"first solution: {exc}", file=sys.stderr)
        if exc.report is not None:
            exc.report.write(os.path.join(args.out, "u.json"), os.path.join(args.out, "u.csv"))
        return EXIT_PARTIAL
    u.write(os.path.join(args.out, "u.json"), os.path.join(args.out, "u.csv"))
    print(f"u: energy={u.energy:.10g} comp_residual={u.comp_residual:.3e} iterations={u.iterations}")
    try:
        w = solve_mountain_pass(inst, op, u)
    except SolverFailure as exc:
        print(f"second solution: {exc}", file=sys.stderr)
        if exc.report is not None:
            exc.report.write(os.path.join(args.out, "w.json"), os.path.join(args.out, "w.csv"))
        return EXIT_PARTIAL
    w.write(os.path.join(args.out, "w.json"), os.path.join(args.out, "w.csv"))
    w.write_trace(os.path.join(args.out, "w_trace.csv"))
    print(f"w: energy={w.energy:.10g} comp_residual={w.comp_residual:.3e} sweeps={w.sweeps} "
          f"rho={w.rho:.6g} sigma={w.sigma_bound:.6g}")
    return EXIT_OK if (u.converged and w.converged) else EXIT_PARTIAL


def cmd_sweep(args):
    cfg, inst = _load(args.config)
    if inst is None:
        return EXIT_INVALID
    rep = check_instance(inst)
    if not rep.passed:
        print("\n".join(rep.lines()), file=sys.stderr)
        return EXIT_INVALID
    try:
        scfg = SweepConfig.from_dict(cfg, out_dir=args.out)
    except ValueError as exc:
        print(f"invalid sweep: {exc}", file=sys.stderr)
        return EXIT_INVALID
    verdict = run_sweep(scfg, workers=args.workers)
    sys.stdout.write(verdict.summary_csv())
    print(f"lambda_star_bracket={verdict.lambda_star_bracket}")
    if any(r.error_u.startswith("BallViolation") for r in verdict.records):
        return EXIT_INVALID
    return EXIT_OK if verdict.all_converged else EXIT_PARTIAL


def cmd_oracle(args):
    cfg, inst = _load(args.config)
    if inst is None:
        return EXIT_INVALID
    mesh = dz.build_mesh(inst, args.n)
    op = dz.assemble(inst, mesh)
    try:
        points = oracle_enumerate(inst, op)
        u = solve_min(inst, op)
        w = solve_mountain_pass(inst, op, u)
    except BallViolation as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    except (SolverFailure, ObstacleError, ValueError) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_PARTIAL
    for p in points:
        print(f"kkt point: energy={p.energy:.12g} max={p.u.max():.6g} comp_residual={p.comp_residual:.2e}")
    ok = True
    for name, rep in (("u", u), ("w", w)):
        gap = min(float(np.max(np.abs(rep.u - p.u))) for p in points) if points else float("inf")
        ok &= gap <= 1e-8
        print(f"{name}: energy={rep.energy:.12g} sup distance to nearest oracle point={gap:.3e}")
    print(json.dumps({"kkt_points": len(points), "rho": inst.rho, "matched": bool(ok)}))
    return EXIT_OK if ok else EXIT_PARTIAL


def build_parser():
    p = argparse.ArgumentParser(prog="obstacle", description="Penalized obstacle problem solver")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("validate", help="check hypotheses and geometry of a config")
    s.add_argument("config")
    s.set_defaults(func=cmd_validate)
    s = sub.add_parser("solve", help="both solutions at one lambda")
    s.add_argument("config")
    s.add_argument("--lambda", dest="lam", type=float, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_solve)
    s = sub.add_parser("sweep", help="run the lambda sweep")
    s.add_argument("config")
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_sweep)
    s = sub.add_parser("oracle", help="cross-check the solvers by active-set enumeration")
    s.add_argument("config")
    s.add_argument("--n", type=int, default=12)
    s.set_defaults(func=cmd_oracle)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
