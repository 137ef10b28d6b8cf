"""Continuous problem data for the obstacle problem on the line.

A problem instance bundles the nonlinearity ``f``, the potential ``V``, the
obstacle ``phi`` and the penalized nonlinearity ``g`` that replaces ``f`` off
the bounded set ``Omega``.  Everything here is an immutable value object with
vectorized evaluators; the discrete machinery lives in :mod:`obstacle.discretize`.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Optional

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .errors import HypothesisViolated, NoBracket

ROOT_TOL = 1e-12
MARGIN_TOL = -1e-12


def _pos(t):
    return np.maximum(np.asarray(t, dtype=float), 0.0)


@dataclass(frozen=True)
class NonlinearitySpec:
    """The nonlinearity f, extended by zero on t <= 0.

    kind is ``"power"`` (f(t) = t**p), ``"tabulated"`` (monotone PCHIP through
    ``(t_table, f_table)``, continued beyond the table by a power law of
    exponent theta - 1) or ``"zero"`` (f = 0, the linear obstacle problem;
    not admissible for the existence theory but useful as a test case).
    """

    kind: str = "power"
    p: float = 3.0
    theta: Optional[float] = None
    t_table: tuple = ()
    f_table: tuple = ()

    def __post_init__(self):
        if self.kind == "power":
            if not self.p > 1:
                raise ValueError(f"power nonlinearity needs p > 1, got {self.p}")
            if self.theta is None:
                object.__setattr__(self, "theta", self.p + 1.0)
        elif self.kind == "tabulated":
            t = np.asarray(self.t_table, dtype=float)
            if t.size < 4 or len(self.f_table) != t.size:
                raise ValueError("tabulated nonlinearity needs >= 4 matching samples")
            if t[0] != 0.0 or np.any(np.diff(t) <= 0):
                raise ValueError("t_table must start at 0 and increase strictly")
            if self.theta is None:
                raise ValueError("tabulated nonlinearity needs an explicit theta")
        elif self.kind == "zero":
            if self.theta is None:
                object.__setattr__(self, "theta", math.inf)
        else:
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}")

    @cached_property
    def _spline(self):
        return PchipInterpolator(np.asarray(self.t_table, float), np.asarray(self.f_table, float))

    @cached_property
    def _spline_F(self):
        return self._spline.antiderivative()

    @cached_property
    def _spline_df(self):
        return self._spline.derivative()

    def _tab_tail(self):
        tmax = self.t_table[-1]
        return tmax, float(self._spline(tmax)), float(self._spline_F(tmax))

    def f(self, t):
        tp = _pos(t)
        if self.kind == "power":
            return tp**self.p
        if self.kind == "zero":
            return np.zeros_like(tp)
        tmax, fmax, _ = self._tab_tail()
        inside = np.minimum(tp, tmax)
        tail = fmax * (np.maximum(tp, tmax) / tmax) ** (self.theta - 1.0)
        return np.where(tp <= tmax, self._spline(inside), tail)

    def F(self, t):
        """Primitive F(t) = int_0^t f."""
        tp = _pos(t)
        if self.kind == "power":
            return tp ** (self.p + 1.0) / (self.p + 1.0)
        if self.kind == "zero":
            return np.zeros_like(tp)
        tmax, fmax, Fmax = self._tab_tail()
        inside = np.minimum(tp, tmax)
        s = np.maximum(tp, tmax) / tmax
        tail = Fmax + fmax * tmax / self.theta * (s**self.theta - 1.0)
        return np.where(tp <= tmax, self._spline_F(inside), tail)

    def df(self, t):
        tp = _pos(t)
        if self.kind == "power":
            return self.p * tp ** (self.p - 1.0)
        if self.kind == "zero":
            return np.zeros_like(tp)
        tmax, fmax, _ = self._tab_tail()
        inside = np.minimum(tp, tmax)
        s = np.maximum(tp, tmax) / tmax
        tail = fmax * (self.theta - 1.0) / tmax * s ** (self.theta - 2.0)
        out = np.where(tp <= tmax, self._spline_df(inside), tail)
        return np.where(np.asarray(t) > 0, out, 0.0)


@dataclass(frozen=True)
class PotentialSpec:
    """Nonnegative potential V vanishing exactly on [o_left, o_right].

    ``"well"``: V(x) = min(cap, slope * dist(x, O)**2).
    ``"tabulated"``: piecewise-linear through ``(x_table, v_table)``.
    """

    kind: str = "well"
    o_left: float = -1.0
    o_right: float = 1.0
    cap: float = 100.0
    slope: float = 1.0e6
    x_table: tuple = ()
    v_table: tuple = ()

    def __post_init__(self):
        if self.kind not in ("well", "tabulated"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if not self.o_left < self.o_right:
            raise ValueError("need o_left < o_right")
        if self.kind == "well" and not (self.cap > 0 and self.slope > 0):
            raise ValueError("well potential needs cap > 0 and slope > 0")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "tabulated":
            return np.interp(x, self.x_table, self.v_table)
        d = np.maximum(np.maximum(self.o_left - x, x - self.o_right), 0.0)
        return np.minimum(self.cap, self.slope * d * d)

    def in_O(self, x):
        x = np.asarray(x, dtype=float)
        return (x > self.o_left) & (x < self.o_right)


@dataclass(frozen=True)
class ObstacleSpec:
    """Obstacle phi with compactly supported positive part.

    ``"bump"``: phi = amplitude * max(0, 1 - s**2) with s = (x - center)/halfwidth,
    minus ``tail`` times a negative bump of the same shape centred at
    s = +-2 (so phi dips below zero right next to the support).
    ``"tabulated"``: piecewise-linear through ``(x_table, phi_table)``.
    """

    kind: str = "bump"
    center: float = 0.0
    halfwidth: float = 0.5
    amplitude: float = 0.15
    tail: float = 0.0
    x_table: tuple = ()
    phi_table: tuple = ()

    def __post_init__(self):
        if self.kind not in ("bump", "tabulated"):
            raise ValueError(f"unknown obstacle kind {self.kind!r}")
        if self.kind == "bump" and not self.halfwidth > 0:
            raise ValueError("bump needs halfwidth > 0")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "tabulated":
            return np.interp(x, self.x_table, self.phi_table, left=min(0.0, self.phi_table[0]),
                             right=min(0.0, self.phi_table[-1]))
        s = (x - self.center) / self.halfwidth
        out = self.amplitude * np.maximum(0.0, 1.0 - s * s)
        if self.tail:
            q = np.abs(s) - 2.0
            out = out - self.tail * np.maximum(0.0, 1.0 - q * q)
        return out

    @cached_property
    def _tab_support(self):
        x = np.asarray(self.x_table, float)
        y = np.asarray(self.phi_table, float)
        pos = np.flatnonzero(y > 0)
        if pos.size == 0:
            return (math.nan, math.nan)
        i, j = pos[0], pos[-1]
        left = x[i] if i == 0 else x[i - 1] + (x[i] - x[i - 1]) * (-y[i - 1]) / (y[i] - y[i - 1])
        right = x[j] if j == x.size - 1 else x[j] + (x[j + 1] - x[j]) * y[j] / (y[j] - y[j + 1])
        return (float(left), float(right))

    @property
    def support_left(self):
        if self.kind == "bump":
            return self.center - self.halfwidth if self.amplitude > 0 else math.nan
        return self._tab_support[0]

    @property
    def support_right(self):
        if self.kind == "bump":
            return self.center + self.halfwidth if self.amplitude > 0 else math.nan
        return self._tab_support[1]

    @property
    def peak(self):
        if self.kind == "bump":
            return max(self.amplitude, 0.0)
        return max(0.0, float(np.max(self.phi_table)))

    def h1_norm_sq(self):
        """||phi_+||^2 in H^1(R)."""
        if self.kind == "bump":
            A, w = max(self.amplitude, 0.0), self.halfwidth
            return A * A * (16.0 * w / 15.0 + 8.0 / (3.0 * w))
        # phi_+ of a piecewise-linear function is piecewise-linear once the
        # zero crossings are inserted as extra nodes
        x = np.asarray(self.x_table, float)
        y = np.asarray(self.phi_table, float)
        xs, ys = [x[0]], [y[0]]
        for i in range(1, x.size):
            if y[i - 1] * y[i] < 0:
                xc = x[i - 1] + (x[i] - x[i - 1]) * (-y[i - 1]) / (y[i] - y[i - 1])
                xs.append(xc)
                ys.append(0.0)
            xs.append(x[i])
            ys.append(y[i])
        xs, yp = np.array(xs), np.maximum(np.array(ys), 0.0)
        dx = np.diff(xs)
        slope = np.diff(yp) / dx
        l2 = np.sum(dx * (yp[:-1] ** 2 + yp[:-1] * yp[1:] + yp[1:] ** 2) / 3.0)
        return float(l2 + np.sum(dx * slope**2))


def solve_threshold_a(f: NonlinearitySpec, k: float, t_max: Optional[float] = None) -> float:
    """Root a > 0 of f(a)/a = 1/k."""
    if f.kind == "zero":
        raise NoBracket("f = 0 never reaches slope 1/k")

    def q(t):
        return float(f.f(t)) / t - 1.0 / k

    if t_max is None:
        if f.kind == "power":
            t_max = 10.0 * k ** (1.0 / (1.0 - f.p))
        else:
            t_max = 1.0
            while q(t_max) <= 0 and t_max < 1e8:
                t_max *= 2.0
    t_lo = t_max * 1e-12
    if not (q(t_lo) < 0 < q(t_max)):
        raise NoBracket(f"f(t)/t - 1/k has no sign change on ({t_lo:g}, {t_max:g}]")
    a = brentq(q, t_lo, t_max, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(q(a)) > ROOT_TOL:
        raise NoBracket(f"root residual {q(a):.3e} above {ROOT_TOL}")
    return a


@dataclass(frozen=True)
class PenalizedNonlinearity:
    """h and the truncation data (k, a, Omega) used to build g = chi f + (1 - chi) h."""

    f: NonlinearitySpec
    k: float
    a: float
    omega_left: float
    omega_right: float

    @classmethod
    def build(cls, f: NonlinearitySpec, k: float, omega_left: float, omega_right: float):
        return cls(f, k, solve_threshold_a(f, k), omega_left, omega_right)

    def in_omega(self, x):
        x = np.asarray(x, dtype=float)
        return (x > self.omega_left) & (x < self.omega_right)

    def h(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t <= self.a, self.f.f(np.minimum(t, self.a)), t / self.k)

    def H(self, t):
        t = np.asarray(t, dtype=float)
        a = self.a
        if math.isinf(a):
            return self.f.F(t)
        above = self.f.F(a) + (t * t - a * a) / (2.0 * self.k)
        return np.where(t <= a, self.f.F(np.minimum(t, a)), above)

    def dh(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t <= self.a, self.f.df(np.minimum(t, self.a)), 1.0 / self.k)


def eval_h(pen: PenalizedNonlinearity, t):
    return pen.h(t)


@dataclass(frozen=True)
class ProblemInstance:
    nonlinearity: NonlinearitySpec
    potential: PotentialSpec
    obstacle: ObstacleSpec
    penalization: PenalizedNonlinearity
    lam: float = 100.0
    L: float = 8.0
    r: float = 1.0
    n: int = 2001
    relax_smallness: bool = False

    def __post_init__(self):
        if self.lam < 0 or self.L <= 0 or self.r <= 0:
            raise ValueError("need lam >= 0, L > 0, r > 0")

    def with_lambda(self, lam: float) -> "ProblemInstance":
        return dataclasses.replace(self, lam=float(lam))

    @property
    def a(self):
        return self.penalization.a

    @property
    def rho(self):
        return self.r**2 / 8.0

    def V(self, x):
        return self.potential(x)

    def phi(self, x):
        return self.obstacle(x)

    def g(self, x, t):
        chi = self.penalization.in_omega(x)
        return np.where(chi, self.nonlinearity.f(t), self.penalization.h(t))

    def G(self, x, t):
        chi = self.penalization.in_omega(x)
        return np.where(chi, self.nonlinearity.F(t), self.penalization.H(t))

    def dg(self, x, t):
        """Partial derivative of g in t (one-sided at the kink t = a)."""
        chi = self.penalization.in_omega(x)
        return np.where(chi, self.nonlinearity.df(t), self.penalization.dh(t))


def eval_g(inst: ProblemInstance, x, t):
    return inst.g(x, t)


def eval_G(inst: ProblemInstance, x, t):
    return inst.G(x, t)


# -- validation ---------------------------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool
    margin: float
    witness: Any = None
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def add(self, name, margin, witness=None, detail="", tol=MARGIN_TOL):
        margin = float(margin)
        self.checks.append(Check(name, bool(margin >= tol), margin, witness, detail))

    def extend(self, other: "ValidationReport"):
        self.checks.extend(other.checks)
        return self

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def raise_if_failed(self):
        for c in self.checks:
            if not c.passed:
                raise HypothesisViolated(c.name, c.witness)

    def lines(self):
        return [
            f"{'PASS' if c.passed else 'FAIL'}  {c.name:<24s} margin={c.margin:+.3e}"
            + (f"  witness={c.witness}" if c.witness is not None and not c.passed else "")
            + (f"  ({c.detail})" if c.detail else "")
            for c in self.checks
        ]


def _rel_gap(lo, hi):
    """(hi - lo) scaled by the magnitude of the pair; >= 0 iff lo <= hi."""
    scale = np.maximum(np.maximum(np.abs(lo), np.abs(hi)), 1e-300)
    return (hi - lo) / scale


def validate_hypotheses(inst: ProblemInstance, samples: int = 10_000, x=None,
                        t_max: float = 100.0) -> ValidationReport:
    """Sample (f1), (f2), monotonicity of f and the chain 2G <= g t <= (1+lam V) t^2 / k."""
    rep = ValidationReport()
    f = inst.nonlinearity
    nt = max(int(math.sqrt(samples)), 10)

    # (f1): f(t)/t -> 0 as t -> 0, sampled on decades down to 1e-12
    t0 = np.logspace(-1, -12, 12)
    ratio = np.abs(f.f(t0) / t0)
    eps = 1e-2
    if np.any(np.diff(ratio) > 1e-12 * np.maximum(ratio[:-1], 1e-300)):
        i = int(np.argmax(np.diff(ratio)))
        rep.add("f1", -1.0, witness=float(t0[i + 1]), detail="f(t)/t not decreasing to 0")
    else:
        rep.add("f1", eps - ratio[-1], witness=float(t0[-1]))

    # (f2): theta F(t) <= f(t) t and F > 0 for t > 0
    t = np.logspace(-6, math.log10(t_max), 4 * nt)
    if not f.theta > 2:
        rep.add("f2", -1.0, witness=f.theta, detail="theta must exceed 2")
    else:
        ft = f.f(t) * t
        gap = _rel_gap(f.theta * f.F(t), ft)
        i = int(np.argmin(gap))
        margin = gap[i] if np.all(f.F(t) > 0) else -1.0
        rep.add("f2", margin, witness=float(t[i]))

    # monotone f
    tm = np.concatenate([np.linspace(-1.0, 0.0, nt), t])
    fv = f.f(tm)
    d = np.diff(fv) / np.maximum(np.abs(fv[1:]), 1.0)
    i = int(np.argmin(d))
    rep.add("f_monotone", min(d[i], 0.0), witness=float(tm[i + 1]))

    # chain inequality off Omega
    pen = inst.penalization
    if x is None:
        x = np.linspace(-inst.L, inst.L, max(nt, 3))
        x = np.concatenate([x, [pen.omega_left, pen.omega_right]])
    x = np.asarray(x, float)
    x = x[~pen.in_omega(x)]
    if x.size:
        ts = np.logspace(-6, math.log10(t_max), max(math.ceil(samples / x.size / 2), 5))
        ts = np.concatenate([-ts[::-1], ts, [pen.a]]) if not math.isinf(pen.a) else np.concatenate([-ts[::-1], ts])
        X, T = np.meshgrid(x, ts, indexing="ij")
        G2 = 2.0 * inst.G(X, T)
        gt = inst.g(X, T) * T
        rhs = (1.0 + inst.lam * inst.V(X)) * T * T / pen.k
        gap = np.minimum(_rel_gap(G2, gt), _rel_gap(gt, rhs))
        i = np.unravel_index(int(np.argmin(gap)), gap.shape)
        rep.add("G_chain", gap[i], witness=(float(X[i]), float(T[i])),
                detail=f"{x.size * ts.size} (x,t) pairs")
    return rep


def check_admissibility(inst: ProblemInstance) -> ValidationReport:
    """Parameter-level invariants: k, the root a, the well, the obstacle and smallness."""
    rep = ValidationReport()
    pen, f, V, ob = inst.penalization, inst.nonlinearity, inst.potential, inst.obstacle
    kmin = max(f.theta / (f.theta - 2.0), 2.0) if f.theta > 2 else math.inf
    rep.add("k_admissible", pen.k - kmin if pen.k > kmin else -1.0, witness=pen.k, detail=f"k > {kmin:g}")
    if math.isinf(pen.a):
        rep.add("a_root", -1.0, witness=pen.a)
    else:
        res = abs(float(f.f(pen.a)) / pen.a - 1.0 / pen.k)
        rep.add("a_root", ROOT_TOL - res, witness=pen.a)
    # V vanishes on O and is positive off its closure
    xs = np.linspace(-inst.L, inst.L, 4001)
    v = V(xs)
    inside = V.in_O(xs)
    outside = (xs < V.o_left) | (xs > V.o_right)
    rep.add("V_nonneg", min(float(v.min()), 0.0), witness=float(xs[np.argmin(v)]))
    rep.add("V_zero_on_O", -float(np.max(np.abs(v[inside]), initial=0.0)))
    vo = v[outside]
    rep.add("V_positive_off_O", 0.0 if vo.size == 0 or vo.min() > 0 else -1.0)
    rep.add("phi_plus_nontrivial", ob.peak if ob.peak > 0 else -1.0)
    if not inst.relax_smallness:
        nsq = ob.h1_norm_sq()
        rep.add("smallness", (inst.r**2 - 4.0 * nsq) if inst.r**2 > 4.0 * nsq else -1.0,
                witness=nsq, detail="4 ||phi_+||^2 < r^2")
    return rep


# -- configuration ---------------------------------------------------------------

DEFAULT_CONFIG = {
    "nonlinearity": {"kind": "power", "p": 3.0, "theta": 4.0},
    "potential": {"kind": "well", "o_left": -1.0, "o_right": 1.0, "cap": 100.0, "slope": 1.0e6},
    "obstacle": {"kind": "bump", "center": 0.0, "halfwidth": 0.5, "amplitude": 0.15},
    "penalization": {"k": 4.0, "omega_left": -1.5, "omega_right": 1.5},
    "lambda": 100.0,
    "L": 8.0,
    "r": 1.0,
    "mesh": {"n": 2001},
}


def _pick(d, keys, section):
    missing = [k for k in keys if k not in d]
    if missing:
        raise ValueError(f"config section {section!r} is missing {missing}")


def instance_from_config(cfg: dict) -> ProblemInstance:
    """Build a ProblemInstance from the JSON configuration layout.

    Optional keys and their defaults: nonlinearity.theta (p + 1), potential.cap
    (100), potential.slope (1e6), obstacle.tail (0), mesh.n (2001),
    relax_smallness (false).
    """
    for sec in ("nonlinearity", "potential", "obstacle", "penalization", "lambda", "L", "r"):
        if sec not in cfg:
            raise ValueError(f"config is missing {sec!r}")
    nl = dict(cfg["nonlinearity"])
    kind = nl.get("kind", "power")
    if kind == "tabulated":
        f = NonlinearitySpec("tabulated", theta=nl["theta"], t_table=tuple(nl["t"]), f_table=tuple(nl["f"]))
    elif kind == "power":
        _pick(nl, ["p"], "nonlinearity")
        f = NonlinearitySpec("power", p=float(nl["p"]), theta=nl.get("theta"))
    else:
        f = NonlinearitySpec(kind)

    pc = dict(cfg["potential"])
    _pick(pc, ["o_left", "o_right"], "potential")
    if pc.get("kind", "well") == "tabulated":
        V = PotentialSpec("tabulated", pc["o_left"], pc["o_right"], x_table=tuple(pc["x"]), v_table=tuple(pc["v"]))
    else:
        V = PotentialSpec("well", float(pc["o_left"]), float(pc["o_right"]),
                          float(pc.get("cap", 100.0)), float(pc.get("slope", 1.0e6)))

    oc = dict(cfg["obstacle"])
    if oc.get("kind", "bump") == "tabulated":
        ob = ObstacleSpec("tabulated", x_table=tuple(oc["x"]), phi_table=tuple(oc["phi"]))
    else:
        _pick(oc, ["center", "halfwidth", "amplitude"], "obstacle")
        ob = ObstacleSpec("bump", float(oc["center"]), float(oc["halfwidth"]), float(oc["amplitude"]),
                          float(oc.get("tail", 0.0)))

    pz = dict(cfg["penalization"])
    _pick(pz, ["k", "omega_left", "omega_right"], "penalization")
    pen = PenalizedNonlinearity.build(f, float(pz["k"]), float(pz["omega_left"]), float(pz["omega_right"]))
    n = int(cfg.get("mesh", {}).get("n", 2001))
    return ProblemInstance(f, V, ob, pen, float(cfg["lambda"]), float(cfg["L"]), float(cfg["r"]), n,
                           bool(cfg.get("relax_smallness", False)))


def load_config(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def default_instance(**overrides) -> ProblemInstance:
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))
    for key, val in overrides.items():
        cfg[key] = val
    return instance_from_config(cfg)
