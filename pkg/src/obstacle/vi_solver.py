"""First (minimizing) solution of the discrete penalized obstacle problem.

Two solvers share one stationarity notion:

* ``projected_gradient``: u <- P(u - tau A^{-1} grad E(u)) with P the
  projection onto the discrete convex set in the A_lam inner product and an
  Armijo rule on tau.  Monotone in energy, so started from phi_+ it stays in
  the basin of the local minimizer.
* ``semismooth_newton``: primal-dual active set Newton iteration on the
  complementarity system, damped on the natural residual.  Index-blind, so it
  also polishes saddle points for :mod:`obstacle.mountain_pass`.

``oracle_enumerate`` is an independent brute-force check for tiny meshes.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import discretize as dz
from .discretize import DiscreteFunction, DiscreteOperator
from .errors import (BallViolation, Infeasible, JacobianSingular, MaxIterExceeded,
                     NoDescent)
from .model import ProblemInstance


@dataclass
class SolverOptions:
    method: str = "projected_gradient"
    tol: float = 1e-10
    max_iter: int = 500
    armijo: float = 1e-4
    backtrack: float = 0.5
    step0: float = 1.0
    min_step: float = 1e-12
    gap_tol_rel: float = 1e-10

    def __post_init__(self):
        if self.method not in ("projected_gradient", "semismooth_newton"):
            raise ValueError(f"unknown method {self.method!r}")
        if not self.tol > 0 or self.max_iter < 1:
            raise ValueError("need tol > 0 and max_iter >= 1")


@dataclass
class SolveReport:
    solution: DiscreteFunction
    energy: float
    lambda_norm: float
    comp_residual: float
    active_set: list
    iterations: int
    localization_max: float
    concentration: float
    linf_off_O: float
    converged: bool = True
    method: str = ""
    min_value: float = 0.0
    stationarity: float = math.nan
    phi_plus_norm_sq: float = math.nan
    apriori_ok: bool = True
    boundary_mass: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def u(self):
        return self.solution.values

    def to_dict(self):
        out = {k: v for k, v in self.__dict__.items() if k not in ("solution", "extra")}
        out["active_set"] = [int(i) for i in self.active_set]
        out.update(self.extra)
        return out

    def write(self, json_path, csv_path):
        self.solution.to_csv(csv_path)
        d = self.to_dict()
        d["solution_csv"] = str(csv_path)
        with open(json_path, "w") as fh:
            json.dump(d, fh, indent=2, sort_keys=True)
            fh.write("\n")


def nodal_obstacle(inst: ProblemInstance, op: DiscreteOperator) -> np.ndarray:
    phi = np.asarray(inst.phi(op.x), dtype=float)
    if phi[0] > 0 or phi[-1] > 0:
        raise Infeasible("obstacle must be <= 0 at the truncation boundary")
    return phi


def gap_tol(inst: ProblemInstance, options: SolverOptions | None = None) -> float:
    rel = options.gap_tol_rel if options is not None else 1e-10
    return rel * max(inst.obstacle.peak, 1.0e-300)


def _check_feasible(u, phi, free):
    bad = u[free] < phi[free] - 1e-14 * np.maximum(1.0, np.abs(phi[free]))
    if np.any(bad):
        i = int(free[np.argmax(bad)])
        raise Infeasible(f"u[{i}] = {u[i]:.6e} below obstacle {phi[i]:.6e}")


def comp_residual(inst: ProblemInstance, op: DiscreteOperator, u, gap=None) -> float:
    """Max nodal violation of the discrete complementarity conditions."""
    u = np.asarray(u, dtype=float)
    phi = nodal_obstacle(inst, op)
    free = op.free
    _check_feasible(u, phi, free)
    gap = gap_tol(inst) if gap is None else gap
    r = dz.gradient(op, inst, u)[free]
    inactive = u[free] > phi[free] + gap
    res = np.where(inactive, np.abs(r), np.maximum(0.0, -r))
    return float(res.max(initial=0.0))


def stationarity(inst: ProblemInstance, op: DiscreteOperator, u, phi=None) -> float:
    """||u - proj(u - A^{-1} grad)||_lam, proj being the A_lam-metric projection onto the feasible set."""
    u = np.asarray(u, dtype=float)
    phi = nodal_obstacle(inst, op) if phi is None else phi
    d = op.riesz(dz.gradient(op, inst, u))
    return op.norm(u - dz.project_K_A(op, u - d, phi, v0=u))


def diagnostics(inst: ProblemInstance, op: DiscreteOperator, u) -> dict:
    u = np.asarray(u, dtype=float)
    x = op.x
    off_omega = ~inst.penalization.in_omega(x)
    off_O = (x < inst.potential.o_left) | (x > inst.potential.o_right)
    return {
        "localization_max": float(u[off_omega].max(initial=-math.inf)),
        "concentration": float(inst.lam * np.sum(op.w * op.V * u * u)),
        "linf_off_O": float(np.abs(u[off_O]).max(initial=0.0)),
    }


def make_report(inst, op, u, iterations, method, converged=True, active=None) -> SolveReport:
    u = np.asarray(u, dtype=float)
    phi = nodal_obstacle(inst, op)
    free = op.free
    if active is None:
        active = free[u[free] <= phi[free] + gap_tol(inst)]
    phip = np.maximum(phi, 0.0)
    rep = SolveReport(
        solution=DiscreteFunction(op.mesh, u),
        energy=dz.energy(op, inst, u),
        lambda_norm=op.norm(u),
        comp_residual=comp_residual(inst, op, u),
        active_set=[int(i) for i in active],
        iterations=int(iterations),
        converged=bool(converged),
        method=method,
        min_value=float(u.min()),
        phi_plus_norm_sq=op.norm_sq(phip),
        boundary_mass=dz.boundary_layer_mass(op, u),
        **diagnostics(inst, op, u),
    )
    rep.apriori_ok = bool(rep.lambda_norm**2 <= 4.0 * rep.phi_plus_norm_sq + 1e-6)
    return rep


def _initial(inst, op, u0, phi):
    u = np.zeros(op.n) if u0 is None else np.array(u0, dtype=float)
    u = np.maximum(u, phi)
    u[0] = u[-1] = 0.0
    return u


def projected_gradient(inst: ProblemInstance, op: DiscreteOperator, u0=None,
                       options: SolverOptions | None = None, trace=None) -> SolveReport:
    """Riesz-preconditioned projected gradient descent with Armijo backtracking.

    ``trace``, if a list, receives the energy of every iterate.
    """
    opt = options or SolverOptions()
    phi = nodal_obstacle(inst, op)
    u = _initial(inst, op, u0, phi)
    E = dz.energy(op, inst, u)
    if trace is not None:
        trace.append(E)
    it = 0
    converged = False
    for it in range(opt.max_iter + 1):
        if comp_residual(inst, op, u) <= opt.tol:
            converged = True
            break
        if it == opt.max_iter:
            break
        d = op.riesz(dz.gradient(op, inst, u))
        tau = opt.step0
        while True:
            u_new = dz.project_K_A(op, u - tau * d, phi, v0=u)
            step_sq = op.norm_sq(u_new - u)
            E_new = dz.energy(op, inst, u_new)
            if E_new <= E - opt.armijo / tau * step_sq:
                break
            if abs(E_new - E) <= 1e-13 * max(1.0, abs(E)) and \
                    comp_residual(inst, op, u_new) < comp_residual(inst, op, u):
                # decrease hidden by energy roundoff; judge the step by the residual
                break
            if step_sq <= 1e-30 * max(1.0, op.norm_sq(u)):
                # stagnation at roundoff level
                u_new, E_new = u, E
                break
            tau *= opt.backtrack
            if tau < opt.min_step:
                raise NoDescent("Armijo backtracking failed",
                                make_report(inst, op, u, it, "projected_gradient", False))
        if u_new is u:
            converged = comp_residual(inst, op, u) <= opt.tol
            break
        u, E = u_new, E_new
        if trace is not None:
            trace.append(E)
    rep = make_report(inst, op, u, it, "projected_gradient", converged)
    rep.stationarity = stationarity(inst, op, u, phi)
    if not converged:
        raise MaxIterExceeded(f"projected gradient: residual {rep.comp_residual:.3e} after {it} iterations", rep)
    return rep


def _natural_residual(inst, op, u, phi, scale):
    free = op.free
    r = dz.gradient(op, inst, u)[free]
    return np.minimum(r, scale * (u[free] - phi[free]))


def semismooth_newton(inst: ProblemInstance, op: DiscreteOperator, u0=None,
                      options: SolverOptions | None = None) -> SolveReport:
    """Primal-dual active set Newton iteration, damped on the natural residual."""
    opt = options or SolverOptions(method="semismooth_newton")
    phi = nodal_obstacle(inst, op)
    free = op.free
    scale = op.diag[free]
    u = _initial(inst, op, u0, phi)
    it = 0
    converged = False
    active = free[:0]
    for it in range(opt.max_iter + 1):
        if comp_residual(inst, op, u) <= opt.tol:
            converged = True
            break
        if it == opt.max_iter:
            break
        r = dz.gradient(op, inst, u)
        act = r[free] - scale * (u[free] - phi[free]) > 0
        active, inact = free[act], free[~act]
        shift = dz.hessian_shift(op, inst, u)
        delta = np.zeros(op.n)
        delta[active] = phi[active] - u[active]
        if inact.size:
            J_delta = op.apply(delta) - shift * delta
            rhs = -r[inact] - J_delta[inact]
            with np.errstate(all="raise"):
                try:
                    delta[inact] = op.solve_sub(inact, rhs, diag_shift=shift)
                except (np.linalg.LinAlgError, FloatingPointError) as exc:
                    raise JacobianSingular(str(exc), make_report(inst, op, u, it, "semismooth_newton", False))
            if not np.all(np.isfinite(delta)):
                raise JacobianSingular("non-finite Newton step",
                                       make_report(inst, op, u, it, "semismooth_newton", False))
        m0 = np.linalg.norm(_natural_residual(inst, op, u, phi, scale))
        alpha = 1.0
        while True:
            trial = u + alpha * delta
            trial[free] = np.maximum(trial[free], phi[free])
            m1 = np.linalg.norm(_natural_residual(inst, op, trial, phi, scale))
            if m1 <= (1.0 - 1e-4 * alpha) * m0 or m1 <= 1e-3 * opt.tol:
                break
            alpha *= 0.5
            if alpha < 1e-10:
                raise NoDescent("no decrease of the natural residual",
                                make_report(inst, op, u, it, "semismooth_newton", False))
        u = trial
    rep = make_report(inst, op, u, it, "semismooth_newton", converged)
    if not converged:
        raise MaxIterExceeded(f"semismooth Newton: residual {rep.comp_residual:.3e} after {it} iterations", rep)
    rep.stationarity = stationarity(inst, op, u, phi)
    return rep


def solve_min(inst: ProblemInstance, op: DiscreteOperator, options: SolverOptions | None = None,
              check_ball: bool = True) -> SolveReport:
    """Local minimizer u_lam reached from the feasible start max(0, phi).

    With ``method="semismooth_newton"`` the Newton iteration falls back to
    projected gradient when it cannot make progress.
    """
    opt = options or SolverOptions()
    phi = nodal_obstacle(inst, op)
    u0 = _initial(inst, op, None, phi)
    if opt.method == "semismooth_newton":
        try:
            rep = semismooth_newton(inst, op, u0, opt)
        except (NoDescent, JacobianSingular):
            rep = projected_gradient(inst, op, u0, opt)
    else:
        rep = projected_gradient(inst, op, u0, opt)
    if check_ball and rep.lambda_norm >= inst.r:
        raise BallViolation(f"||u||_lam = {rep.lambda_norm:.4g} >= r = {inst.r:g}", rep)
    return rep


# -- independent oracle ---------------------------------------------------------


def _dense_newton(inst, op, A, u, idx, tol=1e-13, max_iter=80):
    """Undamped-then-backtracked Newton on grad(u)[idx] = 0, other entries fixed."""
    for _ in range(max_iter):
        r = dz.gradient(op, inst, u)[idx]
        nr = np.linalg.norm(r, np.inf)
        if nr <= tol:
            return u, True
        J = A[np.ix_(idx, idx)] - np.diag(op.w[idx] * inst.dg(op.x[idx], u[idx]))
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            return u, False
        t = 1.0
        n0 = np.linalg.norm(r)
        while t > 1e-8:
            trial = u.copy()
            trial[idx] += t * step
            if np.linalg.norm(dz.gradient(op, inst, trial)[idx]) < (1 - 1e-4 * t) * n0:
                break
            t *= 0.5
        else:
            return u, False
        u = trial
        if not np.all(np.isfinite(u)) or np.abs(u).max() > 1e6:
            return u, False
    return u, np.linalg.norm(dz.gradient(op, inst, u)[idx], np.inf) <= tol


def oracle_starts(inst, op, seed=0, n_random=40):
    x = op.x
    pen = inst.penalization
    c = 0.5 * (pen.omega_left + pen.omega_right)
    half = 0.5 * (pen.omega_right - pen.omega_left)
    phip = np.maximum(inst.phi(x), 0.0)
    profiles = [
        phip / max(phip.max(), 1e-300),
        np.maximum(0.0, 1.0 - ((x - c) / half) ** 2),
        1.0 / np.cosh(x - c),
        np.ones_like(x),
    ]
    starts = [s * p for p in profiles for s in np.geomspace(0.02, 8.0, 24)]
    rng = np.random.default_rng(seed)
    starts += [rng.uniform(0.0, 3.0, x.size) for _ in range(n_random)]
    return starts


def oracle_enumerate(inst: ProblemInstance, op: DiscreteOperator, max_nodes: int = 14,
                     seed: int = 0, starts=None) -> list:
    """All KKT points found by enumerating active sets (tiny meshes only).

    Every subset of the interior nodes where phi > 0 is tried as the active
    set; the remaining nodal equations are solved by dense Newton from many
    starts, and feasible points with nonnegative multipliers are kept.
    """
    if op.n > max_nodes:
        raise ValueError(f"oracle_enumerate is limited to {max_nodes} nodes, mesh has {op.n}")
    phi = nodal_obstacle(inst, op)
    free = op.free
    cand = free[phi[free] > 0]
    A = op.matrix().toarray()
    starts = oracle_starts(inst, op, seed) if starts is None else starts
    found = []
    for mask in itertools.product((False, True), repeat=cand.size):
        S = cand[np.array(mask, dtype=bool)] if cand.size else cand
        I = np.setdiff1d(free, S)
        for s in starts:
            u = np.array(s, dtype=float)
            u[0] = u[-1] = 0.0
            u[S] = phi[S]
            u, ok = _dense_newton(inst, op, A, u, I)
            if not ok:
                continue
            if np.any(u[I] < phi[I] - 1e-12):
                continue
            r = dz.gradient(op, inst, u)
            if S.size and np.any(r[S] < -1e-12):
                continue
            if any(np.max(np.abs(u - v)) <= 1e-7 * max(1.0, np.max(np.abs(v))) for v, _ in found):
                continue
            found.append((u, S))
    reports = [make_report(inst, op, u, 0, "oracle_enumerate", True, active=S) for u, S in found]
    return sorted(reports, key=lambda rp: rp.energy)


def distinct(op: DiscreteOperator, u, w, energy_u: float, energy_w: float) -> bool:
    """Relative L2 distance above 1e-3 and energies more than 1e-8 apart."""
    u, w = np.asarray(u, float), np.asarray(w, float)
    l2 = lambda v: math.sqrt(float(np.sum(op.w * v * v)))
    denom = max(l2(u), l2(w), 1e-300)
    return l2(u - w) / denom > 1e-3 and abs(energy_u - energy_w) > 1e-8


# -- limit problem on O --------------------------------------------------------


def limit_setup(inst: ProblemInstance, mesh: dz.Mesh):
    """lambda-free instance, sub-mesh on closure(O) and its operator."""
    sub, idx = dz.submesh(mesh, inst.potential.o_left, inst.potential.o_right)
    linst = inst.with_lambda(0.0)
    return linst, dz.assemble(linst, sub), idx


def solve_limit_problem(inst: ProblemInstance, mesh: dz.Mesh, options: SolverOptions | None = None):
    """Obstacle problem on O with Dirichlet data on its boundary and nonlinearity f.

    Returns ``(report, extended)`` where ``extended`` is the solution extended
    by zero to the full mesh.
    """
    linst, lop, idx = limit_setup(inst, mesh)
    rep = solve_min(linst, lop, options, check_ball=False)
    ext = np.zeros(mesh.n)
    ext[idx] = rep.u
    return rep, ext
