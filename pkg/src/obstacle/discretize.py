"""P1 discretization of the penalized obstacle problem on [-L, L].

Quadratic terms are assembled exactly (stiffness) or with lumped mass, the
nonlinear terms with the same nodal weights, so that ``gradient`` is the
exact derivative of ``energy``.  Dirichlet values u(-L) = u(L) = 0 are
enforced by the solvers through ``DiscreteOperator.free``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded

from .errors import SingularAssembly
from .model import ProblemInstance


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.nodes, dtype=float)
        if x.ndim != 1 or x.size < 3:
            raise ValueError("mesh needs at least 3 nodes")
        if np.any(np.diff(x) <= 0):
            raise ValueError("mesh nodes must increase strictly")
        x.setflags(write=False)
        object.__setattr__(self, "nodes", x)

    @property
    def n(self):
        return self.nodes.size

    @property
    def spacing(self):
        return np.diff(self.nodes)

    def index_of(self, x, tol=1e-12):
        i = int(np.argmin(np.abs(self.nodes - x)))
        if abs(self.nodes[i] - x) > tol * max(1.0, abs(x)):
            raise KeyError(f"{x} is not a mesh node")
        return i


def breakpoints(inst: ProblemInstance):
    pen, V, ob = inst.penalization, inst.potential, inst.obstacle
    pts = [-inst.L, inst.L, pen.omega_left, pen.omega_right, V.o_left, V.o_right]
    if ob.peak > 0:
        pts += [ob.support_left, ob.support_right]
        if ob.kind == "bump":
            pts.append(ob.center)
    pts = sorted({float(p) for p in pts if np.isfinite(p) and -inst.L <= p <= inst.L})
    return np.array(pts)


def build_mesh(inst: ProblemInstance, n: int | None = None) -> Mesh:
    """Piecewise-uniform mesh of n nodes on [-L, L] with every breakpoint a node.

    Cells are distributed over the segments between breakpoints in proportion
    to their length (largest remainder; ties go to segments nearest the
    origin, so symmetric data gives a symmetric mesh whenever possible).
    """
    n = inst.n if n is None else int(n)
    bp = breakpoints(inst)
    lengths = np.diff(bp)
    nseg = lengths.size
    cells = n - 1
    if cells < nseg:
        raise ValueError(f"n = {n} nodes cannot resolve {bp.size} breakpoints")
    want = np.maximum(lengths / lengths.sum() * cells - 1.0, 0.0)
    extra = cells - nseg
    if want.sum() > 0:
        want *= extra / want.sum()
    base = np.floor(want).astype(int)
    frac = want - base
    mid = np.abs(0.5 * (bp[:-1] + bp[1:]))
    order = sorted(range(nseg), key=lambda j: (-round(frac[j], 12), round(mid[j], 12), j))
    for j in order[: extra - base.sum()]:
        base[j] += 1
    counts = base + 1
    pieces = [np.linspace(bp[j], bp[j + 1], counts[j] + 1)[:-1] for j in range(nseg)]
    nodes = np.concatenate(pieces + [bp[-1:]])
    return Mesh(nodes)


def uniform_mesh(L: float, n: int) -> Mesh:
    return Mesh(np.linspace(-L, L, n))


@dataclass(frozen=True, eq=False)
class DiscreteFunction:
    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.mesh.n,):
            raise ValueError(f"expected {self.mesh.n} nodal values, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("nodal values must be finite")
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["x", "value"])
            for x, v in zip(self.mesh.nodes, self.values):
                wr.writerow([repr(float(x)), repr(float(v))])

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(Mesh(data[:, 0]), data[:, 1])


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Tridiagonal A_lam = K + diag(w (1 + lam V)) plus nodal quadrature data."""

    mesh: Mesh
    lam: float
    w: np.ndarray
    V: np.ndarray
    stiff_diag: np.ndarray
    stiff_off: np.ndarray

    @property
    def x(self):
        return self.mesh.nodes

    @property
    def n(self):
        return self.mesh.n

    @cached_property
    def mass(self):
        return self.w * (1.0 + self.lam * self.V)

    @cached_property
    def diag(self):
        return self.stiff_diag + self.mass

    @property
    def off(self):
        return self.stiff_off

    @cached_property
    def free(self):
        return np.arange(1, self.n - 1)

    def matrix(self):
        return sp.diags([self.off, self.diag, self.off], [-1, 0, 1], format="csr")

    def stiffness(self):
        return sp.diags([self.stiff_off, self.stiff_diag, self.stiff_off], [-1, 0, 1], format="csr")

    def apply(self, u):
        u = np.asarray(u, dtype=float)
        out = self.diag * u
        out[:-1] += self.off * u[1:]
        out[1:] += self.off * u[:-1]
        return out

    def norm_sq(self, u):
        u = np.asarray(u, dtype=float)
        return float(u @ self.apply(u))

    def norm(self, u):
        return float(np.sqrt(max(self.norm_sq(u), 0.0)))

    def h1_norm_sq(self, u):
        """Squared H^1 norm of the interpolant with lumped L^2 part (no potential)."""
        u = np.asarray(u, dtype=float)
        du = np.diff(u)
        return float(np.sum(du * du / self.mesh.spacing) + np.sum(self.w * u * u))

    def sub(self, idx, diag_shift=None):
        """(main, off) of the principal submatrix on sorted indices ``idx``."""
        idx = np.asarray(idx)
        main = self.diag[idx].copy()
        if diag_shift is not None:
            main -= diag_shift[idx]
        adjacent = np.diff(idx) == 1
        off = np.where(adjacent, self.off[np.minimum(idx[:-1], self.n - 2)], 0.0)
        return main, off

    def solve_sub(self, idx, rhs, diag_shift=None):
        """Solve (A - diag(shift))[idx, idx] x = rhs."""
        main, off = self.sub(idx, diag_shift)
        return solve_tridiag(main, off, rhs)

    def riesz(self, r):
        """Interior Riesz representative: d with A_II d = r_I and zero boundary values."""
        d = np.zeros(self.n)
        d[self.free] = self.solve_sub(self.free, np.asarray(r)[self.free])
        return d


def solve_tridiag(main, off, rhs):
    m = main.size
    if m == 0:
        return np.zeros(0)
    if m == 1:
        return np.asarray(rhs, float) / main
    ab = np.zeros((3, m))
    ab[0, 1:] = off
    ab[1] = main
    ab[2, :-1] = off
    return solve_banded((1, 1), ab, rhs)


def assemble(inst: ProblemInstance, mesh: Mesh) -> DiscreteOperator:
    h = mesh.spacing
    if np.any(~np.isfinite(h)) or h.min() <= 1e-14 * max(1.0, abs(mesh.nodes).max()):
        raise SingularAssembly(f"cell width underflow (min spacing {h.min():.3e})")
    n = mesh.n
    inv = 1.0 / h
    sd = np.zeros(n)
    sd[:-1] += inv
    sd[1:] += inv
    w = np.zeros(n)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return DiscreteOperator(mesh, float(inst.lam), w, inst.V(mesh.nodes), sd, -inv)


def energy(op: DiscreteOperator, inst: ProblemInstance, u) -> float:
    """Smooth part of the energy: 0.5 u^T A u - sum_i w_i G(x_i, u_i)."""
    u = np.asarray(u, dtype=float)
    return 0.5 * op.norm_sq(u) - float(np.sum(op.w * inst.G(op.x, u)))


def gradient(op: DiscreteOperator, inst: ProblemInstance, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return op.apply(u) - op.w * inst.g(op.x, u)


def hessian_shift(op: DiscreteOperator, inst: ProblemInstance, u) -> np.ndarray:
    """Diagonal w_i g_t(x_i, u_i); the Hessian of ``energy`` is A - diag(shift)."""
    return op.w * inst.dg(op.x, np.asarray(u, dtype=float))


def project_K(u, phi):
    """Nodal projection max(u, phi) onto the discrete convex set."""
    out = np.maximum(np.asarray(u, dtype=float), np.asarray(phi, dtype=float))
    if isinstance(u, DiscreteFunction):
        return DiscreteFunction(u.mesh, out)
    return out


def linear_obstacle(op: DiscreteOperator, b, phi, v0=None, max_iter=200):
    """Minimize 0.5 v^T A v - b^T v over interior v >= phi, boundary values 0.

    Primal-dual active set iteration; A is a tridiagonal M-matrix so the
    iteration terminates after finitely many active-set changes.
    Returns (v, multiplier, iterations).
    """
    free = op.free
    b = np.asarray(b, float)
    phi = np.asarray(phi, float)
    v = np.zeros(op.n)
    v[free] = np.maximum(phi[free], v0[free] if v0 is not None else phi[free])
    active = v[free] <= phi[free]
    c = op.diag[free]
    for it in range(1, max_iter + 1):
        fixed = np.zeros(op.n)
        fixed[free[active]] = phi[free[active]]
        inact = free[~active]
        rhs = b - op.apply(fixed)
        v = fixed.copy()
        if inact.size:
            v[inact] = op.solve_sub(inact, rhs[inact])
        mu = (op.apply(v) - b)[free]
        mu[~active] = 0.0
        new_active = mu - c * (v[free] - phi[free]) > 0
        if np.array_equal(new_active, active):
            break
        active = new_active
    v[free] = np.maximum(v[free], phi[free])
    return v, mu, it


def project_K_A(op: DiscreteOperator, z, phi, v0=None):
    """Projection of z onto the discrete convex set in the A_lam inner product."""
    z = np.array(z, dtype=float)
    z[0] = z[-1] = 0.0
    v, _, _ = linear_obstacle(op, op.apply(z), phi, v0=v0)
    return v


def boundary_layer_mass(op: DiscreteOperator, u) -> float:
    """int_{|x| > L/2} (|u'|^2 + u^2) for the interpolant of u."""
    u = np.asarray(u, float)
    x = op.x
    half = 0.5 * max(abs(x[0]), abs(x[-1]))
    cell = (np.abs(x[:-1]) >= half) & (np.abs(x[1:]) >= half)
    h = op.mesh.spacing
    du = np.diff(u)
    ua, ub = u[:-1], u[1:]
    l2 = h * (ua * ua + ua * ub + ub * ub) / 3.0
    return float(np.sum((du * du / h + l2)[cell]))


def submesh(mesh: Mesh, lo: float, hi: float):
    """Nodes in [lo, hi] (both must be mesh nodes) and their indices."""
    i, j = mesh.index_of(lo), mesh.index_of(hi)
    return Mesh(mesh.nodes[i: j + 1]), np.arange(i, j + 1)
