"""Second solution at the mountain-pass level.

A discrete path joins u_lam to a far endpoint e = t* phi_+ of lower energy.
Each sweep moves only the path's highest point one projected, Riesz-
preconditioned descent step; the path is re-parametrized by lam-norm
arclength every few sweeps.  Once the peak is close to stationary it is
handed to the semismooth Newton iteration, which converges to the saddle.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import discretize as dz
from .discretize import DiscreteOperator
from .errors import (EndpointNotFound, JacobianSingular, MaxIterExceeded, NoDescent,
                     PathCollapse, SolverFailure, StallDetected)
from .model import ProblemInstance
from .vi_solver import (SolveReport, SolverOptions, make_report, nodal_obstacle,
                        semismooth_newton)


@dataclass
class MountainPassOptions:
    P: int = 40
    max_sweeps: int = 3000
    handoff_tol: float = 1e-3
    tol: float = 1e-10
    respread_every: int = 10
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-12
    stall_tol: float = 1e-9
    stall_sweeps: int = 25
    step_fraction: float = 0.5
    newton_max_iter: int = 100


@dataclass(eq=False)
class MountainPath:
    points: np.ndarray
    energies: np.ndarray

    @property
    def P(self):
        return self.points.shape[0] - 1

    @property
    def peak_index(self):
        return int(np.argmax(self.energies))

    @property
    def peak_energy(self):
        return float(self.energies.max())


@dataclass
class MountainPassReport(SolveReport):
    c_lambda: float = math.nan
    rho: float = math.nan
    sigma_bound: float = math.nan
    sweeps: int = 0
    handoff_residual: float = math.nan
    t_star: float = math.nan
    trace: list = field(default_factory=list)
    path: MountainPath | None = None

    def to_dict(self):
        d = super().to_dict()
        for key in ("trace", "path"):
            d.pop(key, None)
        return d

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["sweep", "peak_energy", "residual"])
            for s, e, r in self.trace:
                wr.writerow([s, repr(float(e)), repr(float(r))])


def build_endpoint(inst: ProblemInstance, op: DiscreteOperator, energy_u: float,
                   max_power: int = 30):
    """Smallest t* = 2^j with E(t* phi_+) < E(u_lam) - 1 and ||t* phi_+||_lam > r."""
    phip = np.maximum(nodal_obstacle(inst, op), 0.0)
    if not np.any(phip > 0):
        raise EndpointNotFound("phi_+ vanishes on the mesh")
    for j in range(1, max_power + 1):
        t = 2.0**j
        e = t * phip
        if dz.energy(op, inst, e) < energy_u - 1.0 and op.norm(e) > inst.r:
            return e, t
    raise EndpointNotFound(f"energy along t phi_+ stays above E(u_lam) - 1 up to t = 2^{max_power}")


def initial_path(u, e, P: int, op: DiscreteOperator, inst: ProblemInstance) -> MountainPath:
    phi = nodal_obstacle(inst, op)
    s = np.linspace(0.0, 1.0, P + 1)[:, None]
    pts = dz.project_K((1.0 - s) * np.asarray(u)[None, :] + s * np.asarray(e)[None, :], phi)
    pts[0], pts[-1] = u, e
    return MountainPath(pts, np.array([dz.energy(op, inst, p) for p in pts]))


def _reparametrize(path: MountainPath, op, inst):
    """Equal lam-norm arclength spacing along the polyline; endpoints kept."""
    pts = path.points
    seg = np.array([op.norm(pts[i + 1] - pts[i]) for i in range(path.P)])
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] <= 0:
        return path
    target = np.linspace(0.0, s[-1], path.P + 1)
    new = np.empty_like(pts)
    new[0], new[-1] = pts[0], pts[-1]
    for k in range(1, path.P):
        i = min(int(np.searchsorted(s, target[k], side="right")) - 1, path.P - 1)
        frac = 0.0 if seg[i] == 0 else (target[k] - s[i]) / seg[i]
        new[k] = (1.0 - frac) * pts[i] + frac * pts[i + 1]
    energies = np.array([dz.energy(op, inst, p) for p in new])
    energies[0], energies[-1] = path.energies[0], path.energies[-1]
    return MountainPath(new, energies)


def sigma_bound(inst: ProblemInstance, op: DiscreteOperator, t_star: float, grid: int = 1001) -> float:
    """max over t in [0, 1] of J(t t* phi_+), J the lam-free energy restricted to Omega.

    Grid maximum refined by a bounded scalar search around the best node.
    """
    x = op.x
    in_om = inst.penalization.in_omega(x)
    phip = np.maximum(nodal_obstacle(inst, op), 0.0)
    h = op.mesh.spacing
    cell_in = in_om[:-1] | in_om[1:]
    quad = 0.5 * (np.sum((np.diff(phip) ** 2 / h)[cell_in]) + np.sum((op.w * phip * phip)[in_om]))
    w_om, p_om = op.w[in_om], phip[in_om]
    F = inst.nonlinearity.F

    def J(t):
        s = t * t_star
        return s * s * quad - float(np.sum(w_om * F(s * p_om)))

    ts = np.linspace(0.0, 1.0, grid)
    vals = np.array([J(t) for t in ts])
    i = int(np.argmax(vals))
    best = vals[i]
    lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, grid - 1)]
    if hi > lo:
        res = minimize_scalar(lambda t: -J(t), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-13})
        best = max(best, -res.fun)
    return float(best)


def _ridge_point(path: MountainPath, j: int, op, inst, xatol=1e-8):
    """Highest point on the two path segments meeting at point j."""
    best_E, best = path.energies[j], path.points[j]
    for k in (j - 1, j + 1):
        a, b = path.points[j], path.points[k]
        res = minimize_scalar(lambda s: -dz.energy(op, inst, (1.0 - s) * a + s * b),
                              bounds=(0.0, 1.0), method="bounded", options={"xatol": xatol})
        if -res.fun > best_E:
            best_E, best = -res.fun, (1.0 - res.x) * a + res.x * b
    return float(best_E), best


def _settle(path: MountainPath, op, inst):
    """Move the path's peak onto the local ridge (in place); returns the peak energy."""
    j = path.peak_index
    if 0 < j < path.P:
        E, w = _ridge_point(path, j, op, inst)
        path.points[j] = w
        path.energies[j] = E
    return path.peak_energy


def _respread_neighbours(path: MountainPath, j: int, op, inst, ceiling: float):
    """Pull the peak's neighbours to the midpoints of their own neighbours."""
    for k in (j - 1, j + 1):
        if 0 < k < path.P:
            mid = 0.5 * (path.points[k - 1] + path.points[k + 1])
            Em = dz.energy(op, inst, mid)
            if Em <= ceiling:
                path.points[k] = mid
                path.energies[k] = Em


def deform(path: MountainPath, op: DiscreteOperator, inst: ProblemInstance,
           options: MountainPassOptions | None = None, energy_floor: float | None = None):
    """Lower the path's peak until it is nearly stationary, then Newton-polish it.

    The peak is kept on the ridge: before a move is accepted, the new highest
    point is slid along its two segments to the local energy maximum, and the
    move is rejected if that maximum exceeds the current one.  The recorded
    peak energy is therefore nonincreasing.  When the peak stops descending
    (``stall_sweeps`` sweeps without progress) or its residual drops below
    ``handoff_tol``, it is handed to the semismooth Newton iteration.

    Returns ``(report, path)``; the endpoints of ``path`` are untouched.
    """
    opt = options or MountainPassOptions()
    phi = nodal_obstacle(inst, op)
    path = MountainPath(path.points.copy(), path.energies.copy())
    rho = inst.rho
    floor = max(path.energies[0], path.energies[-1]) if energy_floor is None else energy_floor
    top = _settle(path, op, inst)
    trace = []
    stalls = 0
    residual = math.inf
    stalled = False
    sweep = 0
    for sweep in range(1, opt.max_sweeps + 1):
        j = path.peak_index
        if j in (0, path.P):
            raise PathCollapse(f"path maximum at endpoint {j}")
        w = path.points[j]
        d = op.riesz(dz.gradient(op, inst, w))
        w_full = dz.project_K_A(op, w - d, phi, v0=w)
        residual = op.norm(w_full - w)
        trace.append((sweep, top, residual))
        if residual <= opt.handoff_tol:
            break
        if top < floor + rho / 100.0:
            raise PathCollapse(f"peak energy {top:.6g} fell to the endpoint level without stationarity")
        # trust region: never step further than a fraction of the local path spacing
        spacing = min(op.norm(w - path.points[j - 1]), op.norm(w - path.points[j + 1]))
        tau = min(1.0, opt.step_fraction * spacing / max(residual, 1e-300))
        accepted = None
        while tau >= opt.min_step:
            w_new = w_full if tau == 1.0 else dz.project_K_A(op, w - tau * d, phi, v0=w)
            E_new = dz.energy(op, inst, w_new)
            if E_new <= top - opt.armijo / tau * op.norm_sq(w_new - w):
                cand = MountainPath(path.points.copy(), path.energies.copy())
                cand.points[j], cand.energies[j] = w_new, E_new
                _respread_neighbours(cand, j, op, inst, top)
                if _settle(cand, op, inst) <= top:
                    accepted = cand
                    break
            tau *= opt.backtrack
        progress = 0.0
        if accepted is not None:
            progress = top - accepted.peak_energy
            path, top = accepted, accepted.peak_energy
        if opt.respread_every and sweep % opt.respread_every == 0:
            cand = _reparametrize(path, op, inst)
            E_c = _settle(cand, op, inst)
            if E_c <= top:
                progress += top - E_c
                path, top = cand, E_c
        if progress < opt.stall_tol * max(1.0, abs(top)):
            stalls += 1
            if stalls >= opt.stall_sweeps:
                stalled = True
                break
        else:
            stalls = 0

    w0 = path.points[path.peak_index]
    newton_opt = SolverOptions(method="semismooth_newton", tol=opt.tol, max_iter=opt.newton_max_iter)
    try:
        rep = semismooth_newton(inst, op, w0, newton_opt)
    except (NoDescent, JacobianSingular, MaxIterExceeded) as exc:
        base = exc.report
        if stalled:
            raise StallDetected(f"peak stalled at residual {residual:.3e}; Newton polish failed: {exc}", base)
        if sweep >= opt.max_sweeps and residual > opt.handoff_tol:
            raise MaxIterExceeded(f"mountain pass: residual {residual:.3e} after {sweep} sweeps", base)
        raise
    out = MountainPassReport(**rep.__dict__)
    out.method = "mountain_pass"
    out.c_lambda = rep.energy
    out.rho = rho
    out.sweeps = sweep
    out.iterations = sweep + rep.iterations
    out.handoff_residual = residual
    out.trace = trace
    out.path = path
    if out.c_lambda < floor + rho / 100.0:
        raise PathCollapse(f"Newton polish left the mountain-pass level (energy {out.c_lambda:.6g})", out)
    return out, path


def solve_mountain_pass(inst: ProblemInstance, op: DiscreteOperator, u_report: SolveReport,
                        options: MountainPassOptions | None = None) -> MountainPassReport:
    """Full pipeline: endpoint, straight initial path, deformation, sigma bound."""
    opt = options or MountainPassOptions()
    e, t_star = build_endpoint(inst, op, u_report.energy)
    path = initial_path(u_report.u, e, opt.P, op, inst)
    rep, _ = deform(path, op, inst, opt)
    rep.t_star = t_star
    rep.sigma_bound = sigma_bound(inst, op, t_star)
    return rep


__all__ = [
    "MountainPassOptions", "MountainPath", "MountainPassReport", "build_endpoint",
    "initial_path", "deform", "sigma_bound", "solve_mountain_pass", "SolverFailure",
]
