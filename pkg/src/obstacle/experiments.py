"""lambda sweeps: both solutions per lambda, verdict, CSV/JSON output and plots."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import discretize as dz
from .errors import ObstacleError, SolverFailure
from .model import (ProblemInstance, ValidationReport, check_admissibility,
                    instance_from_config, validate_hypotheses)
from .mountain_pass import MountainPassOptions, solve_mountain_pass
from .vi_solver import SolverOptions, distinct, solve_limit_problem, solve_min

DEFAULT_LAMBDAS = (1.0, 3.16, 10.0, 31.6, 100.0, 316.0, 1000.0)

SUMMARY_COLUMNS = (
    "lambda", "I_u", "I_w", "rho", "sigma", "norm_u", "norm_w", "loc_max_u", "loc_max_w", "a",
    "conc_u", "conc_w", "linf_u", "linf_w", "dist_limit_u", "solves_u", "solves_w",
    "converged_u", "converged_w",
)

PLOT_NAMES = ("summary_solutions.svg", "summary_energies.svg", "summary_concentration.svg")


@dataclass
class SweepConfig:
    instance: ProblemInstance
    lambdas: tuple = DEFAULT_LAMBDAS
    solver: SolverOptions = field(default_factory=SolverOptions)
    mountain_pass: MountainPassOptions = field(default_factory=MountainPassOptions)
    out_dir: str | None = None

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lambdas)
        if any(v <= 0 or not math.isfinite(v) for v in lam):
            raise ValueError("sweep lambdas must be finite and positive")
        if any(b <= a for a, b in zip(lam, lam[1:])):
            raise ValueError("sweep lambdas must increase strictly")
        self.lambdas = lam

    @classmethod
    def from_dict(cls, cfg: dict, out_dir=None):
        """Config document plus optional ``sweep`` section ({"lambdas": [...]})."""
        sweep = cfg.get("sweep", {})
        return cls(instance_from_config(cfg), tuple(sweep.get("lambdas", DEFAULT_LAMBDAS)), out_dir=out_dir)


@dataclass
class LambdaRecord:
    lam: float
    I_u: float = math.nan
    I_w: float = math.nan
    rho: float = math.nan
    sigma: float = math.nan
    norm_u: float = math.nan
    norm_w: float = math.nan
    loc_max_u: float = math.nan
    loc_max_w: float = math.nan
    a: float = math.nan
    conc_u: float = math.nan
    conc_w: float = math.nan
    linf_u: float = math.nan
    linf_w: float = math.nan
    dist_limit_u: float = math.nan
    converged_u: bool = False
    converged_w: bool = False
    distinct: bool = False
    error_u: str = ""
    error_w: str = ""

    @property
    def solves_original_u(self):
        return bool(self.loc_max_u <= self.a)

    @property
    def solves_original_w(self):
        return bool(self.loc_max_w <= self.a)

    def row(self):
        vals = {name: getattr(self, name) for name in SUMMARY_COLUMNS if hasattr(self, name)}
        vals["lambda"] = self.lam
        vals["solves_u"] = self.solves_original_u
        vals["solves_w"] = self.solves_original_w
        out = []
        for name in SUMMARY_COLUMNS:
            v = vals[name]
            out.append(("true" if v else "false") if isinstance(v, bool) else repr(float(v)))
        return out


@dataclass
class TheoremVerdict:
    records: list = field(default_factory=list)
    lambda_star_detected: float | None = None
    lambda_star_bracket: tuple | None = None

    @property
    def all_converged(self):
        return all(r.converged_u and r.converged_w for r in self.records)

    def detect_lambda_star(self):
        """Smallest sweep lambda from which both flags hold at every larger sweep lambda."""
        star, bracket = None, None
        for i in range(len(self.records) - 1, -1, -1):
            r = self.records[i]
            if not (r.solves_original_u and r.solves_original_w):
                break
            star = r.lam
            bracket = (self.records[i - 1].lam if i > 0 else 0.0, r.lam)
        self.lambda_star_detected, self.lambda_star_bracket = star, bracket
        return star

    def summary_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(SUMMARY_COLUMNS)
        for r in self.records:
            wr.writerow(r.row())
        return buf.getvalue()

    def to_dict(self):
        recs = []
        for r in self.records:
            d = asdict(r)
            d["solves_original_u"] = r.solves_original_u
            d["solves_original_w"] = r.solves_original_w
            recs.append(d)
        return {"records": recs, "lambda_star_detected": self.lambda_star_detected,
                "lambda_star_bracket": self.lambda_star_bracket}


@dataclass
class LambdaResult:
    record: LambdaRecord
    u_report: object = None
    w_report: object = None
    seconds_u: float = math.nan
    seconds_w: float = math.nan


def _limit_reference(inst: ProblemInstance, mesh, options):
    rep, ext = solve_limit_problem(inst, mesh, options)
    return ext


def solve_lambda(inst: ProblemInstance, lam: float, mesh=None, solver=None, mp_options=None,
                 limit=None) -> LambdaResult:
    """Both solutions at one lambda; solver failures are recorded, not raised."""
    inst = inst.with_lambda(lam)
    mesh = dz.build_mesh(inst) if mesh is None else mesh
    op = dz.assemble(inst, mesh)
    rec = LambdaRecord(lam=float(lam), rho=inst.rho, a=inst.a)
    res = LambdaResult(rec)
    t0 = time.perf_counter()
    try:
        u = solve_min(inst, op, solver)
    except SolverFailure as exc:
        rec.error_u = f"{type(exc).__name__}: {exc}"
        u = exc.report
    except ObstacleError as exc:
        rec.error_u = f"{type(exc).__name__}: {exc}"
        u = None
    res.seconds_u = time.perf_counter() - t0
    if u is not None:
        res.u_report = u
        rec.I_u, rec.norm_u = u.energy, u.lambda_norm
        rec.loc_max_u, rec.conc_u, rec.linf_u = u.localization_max, u.concentration, u.linf_off_O
        rec.converged_u = bool(u.converged and not rec.error_u)
        if limit is not None:
            rec.dist_limit_u = math.sqrt(op.h1_norm_sq(u.u - limit))
    if rec.converged_u:
        t0 = time.perf_counter()
        try:
            w = solve_mountain_pass(inst, op, u, mp_options)
            w.path = None
        except SolverFailure as exc:
            rec.error_w = f"{type(exc).__name__}: {exc}"
            w = exc.report
        except ObstacleError as exc:
            rec.error_w = f"{type(exc).__name__}: {exc}"
            w = None
        res.seconds_w = time.perf_counter() - t0
        if w is not None:
            res.w_report = w
            rec.I_w, rec.norm_w = w.energy, w.lambda_norm
            rec.sigma = getattr(w, "sigma_bound", math.nan)
            rec.loc_max_w, rec.conc_w, rec.linf_w = w.localization_max, w.concentration, w.linf_off_O
            rec.converged_w = bool(w.converged and not rec.error_w)
            rec.distinct = distinct(op, u.u, w.u, u.energy, w.energy)
    elif not rec.error_w:
        rec.error_w = "skipped: no first solution"
    return res


def _solve_task(args):
    return solve_lambda(*args)


def run_sweep(cfg: SweepConfig, workers: int = 1) -> TheoremVerdict:
    """Solve every lambda of the sweep, build the verdict and (optionally) write files.

    Lambdas run in a process pool when ``workers > 1``; all files are written
    afterwards by this process.
    """
    inst = cfg.instance
    mesh = dz.build_mesh(inst)
    limit = _limit_reference(inst, mesh, cfg.solver)
    tasks = [(inst, lam, mesh, cfg.solver, cfg.mountain_pass, limit) for lam in cfg.lambdas]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_solve_task, tasks))
    else:
        results = [_solve_task(t) for t in tasks]
    verdict = TheoremVerdict([r.record for r in results])
    verdict.detect_lambda_star()
    verdict.results = results
    verdict.limit = limit
    if cfg.out_dir is not None:
        write_outputs(cfg.out_dir, verdict, results, inst, mesh, limit)
    return verdict


def _tag(i, lam):
    return f"{i:02d}_lambda_{lam:g}"


def write_outputs(out_dir, verdict: TheoremVerdict, results, inst, mesh, limit):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
        fh.write(verdict.summary_csv())
    with open(os.path.join(out_dir, "verdict.json"), "w") as fh:
        json.dump(verdict.to_dict(), fh, indent=2, sort_keys=True)
    # wall-clock times live apart so that every other file is reproducible
    with open(os.path.join(out_dir, "timings.json"), "w") as fh:
        json.dump([{"lambda": r.record.lam, "seconds_u": r.seconds_u, "seconds_w": r.seconds_w}
                   for r in results], fh, indent=2)
    dz.DiscreteFunction(mesh, limit).to_csv(os.path.join(out_dir, "limit_u.csv"))
    for i, res in enumerate(results):
        tag = _tag(i, res.record.lam)
        for name, rep in (("u", res.u_report), ("w", res.w_report)):
            if rep is None:
                continue
            rep.write(os.path.join(out_dir, f"{tag}_{name}.json"), os.path.join(out_dir, f"{tag}_{name}.csv"))
        if res.w_report is not None and getattr(res.w_report, "trace", None):
            res.w_report.write_trace(os.path.join(out_dir, f"{tag}_w_trace.csv"))
    if results:
        x = mesh.nodes
        phi = inst.phi(x)
        sols = {r.record.lam: (r.u_report.u if r.u_report is not None else None,
                               r.w_report.u if r.w_report is not None else None) for r in results}
        emit_plots(verdict, {"x": x, "phi": phi, "solutions": sols, "instance": inst}, out_dir)


# -- validation ---------------------------------------------------------------


def check_geometry(inst: ProblemInstance, mesh=None) -> ValidationReport:
    """supp phi_+ inside O, closure(O) inside Omega, Omega inside (-L, L), phi(+-L) <= 0."""
    rep = ValidationReport()
    V, pen, ob = inst.potential, inst.penalization, inst.obstacle
    L = inst.L
    mesh = dz.build_mesh(inst) if mesh is None else mesh
    x = mesh.nodes
    phi = inst.phi(x)
    outside = (phi > 0) & ~V.in_O(x)
    if np.any(outside):
        i = int(np.argmax(outside))
        rep.add("supp_phi_in_O", -float(phi[i]), witness=float(x[i]), detail="phi > 0 outside O")
    else:
        margin = min(ob.support_left - V.o_left, V.o_right - ob.support_right) if ob.peak > 0 else 0.0
        rep.add("supp_phi_in_O", margin)
    gap = min(V.o_left - pen.omega_left, pen.omega_right - V.o_right)
    rep.add("closure_O_in_Omega", gap if gap > 0 else -1.0,
            witness=None if gap > 0 else (pen.omega_left, pen.omega_right),
            detail="strict containment")
    gap = min(pen.omega_left + L, L - pen.omega_right)
    rep.add("Omega_in_box", gap if gap > 0 else -1.0, witness=None if gap > 0 else L)
    ends = max(float(inst.phi(np.array([-L]))[0]), float(inst.phi(np.array([L]))[0]))
    rep.add("phi_nonpositive_at_ends", -ends, witness=None if ends <= 0 else L)
    return rep


def check_instance(cfg) -> ValidationReport:
    """Hypotheses, admissibility and geometry of a config dict or ProblemInstance."""
    inst = cfg if isinstance(cfg, ProblemInstance) else instance_from_config(cfg)
    rep = validate_hypotheses(inst)
    rep.extend(check_admissibility(inst))
    rep.extend(check_geometry(inst))
    return rep


# -- plots ----------------------------------------------------------------------


def emit_plots(verdict: TheoremVerdict, solutions: dict, out_dir) -> list:
    """Write the three summary SVGs; returns their paths (none for an empty sweep).

    ``solutions`` holds ``x``, ``phi``, ``instance`` and ``solutions`` (a map
    lambda -> (u, w) of nodal arrays).
    """
    if not verdict.records:
        return []
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    x, phi, inst = solutions["x"], solutions["phi"], solutions["instance"]
    sols = solutions["solutions"]
    pen = inst.penalization
    a = inst.a
    paths = []
    with matplotlib.rc_context({"svg.hashsalt": "obstacle", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(8, 4.5))
        cmap = plt.get_cmap("viridis")
        lams = sorted(sols)
        for i, lam in enumerate(lams):
            col = cmap(i / max(len(lams) - 1, 1))
            u, w = sols[lam]
            if u is not None:
                ax.plot(x, u, color=col, lw=1.0, label=f"u, lambda={lam:g}")
            if w is not None:
                ax.plot(x, w, color=col, lw=1.0, ls="--", label=f"w, lambda={lam:g}")
        ax.plot(x, phi, color="k", lw=0.8, label="phi")
        for lo, hi in ((x[0], pen.omega_left), (pen.omega_right, x[-1])):
            ax.fill_between([lo, hi], 0.0, a, color="0.85", zorder=0)
        ax.axhline(a, color="0.5", lw=0.6, ls=":")
        ax.set_xlabel("x")
        ax.set_ylabel("value")
        ax.set_ylim(bottom=min(-0.05, float(np.min(phi[np.isfinite(phi)])) if phi.size else -0.05))
        ax.legend(fontsize=6, ncol=2)
        paths.append(_save(fig, out_dir, PLOT_NAMES[0]))

        recs = verdict.records
        lam = np.array([r.lam for r in recs])
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.semilogx(lam, [r.I_u for r in recs], "o-", label="I(u)")
        ax.semilogx(lam, [r.I_w for r in recs], "s-", label="I(w)")
        ax.semilogx(lam, [r.rho for r in recs], "k--", label="rho")
        ax.semilogx(lam, [r.sigma for r in recs], "k:", label="Sigma")
        ax.set_yscale("symlog", linthresh=1e-2)
        ax.set_xlabel("lambda")
        ax.set_ylabel("energy")
        ax.legend(fontsize=7)
        paths.append(_save(fig, out_dir, PLOT_NAMES[1]))

        fig, ax = plt.subplots(figsize=(6, 4))
        for key, lab in (("conc_u", "conc u"), ("conc_w", "conc w"), ("linf_u", "sup off O, u"),
                         ("linf_w", "sup off O, w"), ("dist_limit_u", "H1 dist u to limit")):
            vals = np.array([getattr(r, key) for r in recs], float)
            ax.loglog(lam, np.maximum(vals, 1e-300), "o-", label=lab)
        ax.set_xlabel("lambda")
        ax.legend(fontsize=7)
        paths.append(_save(fig, out_dir, PLOT_NAMES[2]))
    return paths


def _save(fig, out_dir, name):
    import matplotlib.pyplot as plt

    path = os.path.join(out_dir, name)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


__all__ = [
    "DEFAULT_LAMBDAS", "SUMMARY_COLUMNS", "PLOT_NAMES", "SweepConfig", "LambdaRecord",
    "TheoremVerdict", "solve_lambda", "run_sweep", "write_outputs", "check_geometry",
    "check_instance", "emit_plots",
]
