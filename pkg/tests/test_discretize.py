import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import trapezoid

from conftest import instance, setup
from obstacle import discretize as dz
from obstacle import vi_solver as vs
from obstacle.errors import SingularAssembly


# -- mesh ----------------------------------------------------------------------------


def test_mesh_endpoints_and_breakpoints(default_inst):
    mesh = dz.build_mesh(default_inst)
    x = mesh.nodes
    assert mesh.n == 2001
    assert x[0] == -8.0 and x[-1] == 8.0
    assert np.all(mesh.spacing > 0)
    for b in (-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5):
        mesh.index_of(b)


def test_default_mesh_is_symmetric_and_nearly_uniform(default_inst):
    x = dz.build_mesh(default_inst).nodes
    assert np.allclose(x, -x[::-1], atol=1e-14)
    h = np.diff(x)
    assert h.max() / h.min() < 1.02


def test_mesh_rejects_bad_nodes():
    with pytest.raises(ValueError):
        dz.Mesh(np.array([0.0, 1.0, 1.0]))
    with pytest.raises(ValueError):
        dz.Mesh(np.array([0.0, 1.0]))


def test_too_few_nodes_for_breakpoints(default_inst):
    with pytest.raises(ValueError):
        dz.build_mesh(default_inst, 5)


def test_singular_assembly(default_inst):
    mesh = dz.Mesh(np.array([-8.0, 0.0, 1e-15, 8.0]))
    with pytest.raises(SingularAssembly):
        dz.assemble(default_inst, mesh)


# -- operator ------------------------------------------------------------------------


def test_lambda_zero_drops_potential(default_inst):
    mesh = dz.build_mesh(default_inst, 101)
    op0 = dz.assemble(default_inst.with_lambda(0.0), mesh)
    A = op0.matrix().toarray()
    assert np.allclose(A, op0.stiffness().toarray() + np.diag(op0.w))


def test_uniform_stencil():
    inst = instance(L=8.0)
    mesh = dz.uniform_mesh(8.0, 33)
    op = dz.assemble(inst, mesh)
    K = op.stiffness().toarray()
    d = 0.5
    for i in range(1, 32):
        assert K[i, i - 1] == pytest.approx(-1 / d)
        assert K[i, i] == pytest.approx(2 / d)
        assert K[i, i + 1] == pytest.approx(-1 / d)
    assert np.allclose(K[1:-1].sum(axis=1), 0.0)


def test_constant_norm_against_trapezoid():
    inst = instance(L=2.0, penalization={"omega_left": -1.5, "omega_right": 1.5}).with_lambda(10.0)
    mesh = dz.uniform_mesh(2.0, 5)
    op = dz.assemble(inst, mesh)
    one = np.ones(5)
    x = mesh.nodes
    expected = float(np.sum(op.w * (1 + 10 * inst.V(x))))
    assert op.norm_sq(one) == pytest.approx(expected, rel=1e-14)
    assert op.norm_sq(one) == pytest.approx(trapezoid(1 + 10 * inst.V(x), x), rel=1e-14)


# magnitudes below 1e-154 square to zero in double precision
REPRESENTABLE = st.one_of(st.just(0.0), st.floats(1e-100, 10), st.floats(-10, -1e-100))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 101, elements=REPRESENTABLE))
def test_norm_positive_definite(u):
    inst = instance()
    op = dz.assemble(inst, dz.build_mesh(inst, 101))
    if np.any(u != 0):
        assert op.norm_sq(u) > 0


def test_norm_monotone_in_lambda(default_inst, rng):
    mesh = dz.build_mesh(default_inst, 401)
    x = mesh.nodes
    u = np.exp(-x**2)
    inside = np.where(np.abs(x) < 0.9, np.cos(np.pi * x / 1.8), 0.0)
    n1, n2 = (dz.assemble(default_inst.with_lambda(l), mesh) for l in (1.0, 50.0))
    assert n1.norm(u) < n2.norm(u)
    assert n1.norm(inside) == pytest.approx(n2.norm(inside), rel=1e-14)


def test_riesz_solves_interior_system(default_op, rng):
    r = rng.normal(size=default_op.n)
    d = default_op.riesz(r)
    assert d[0] == d[-1] == 0.0
    assert np.allclose(default_op.apply(d)[1:-1], r[1:-1], atol=1e-10)


# -- energy and gradient ---------------------------------------------------------------


def test_energy_of_zero(default_inst, default_op):
    assert dz.energy(default_op, default_inst, np.zeros(default_op.n)) == 0.0
    assert np.all(dz.gradient(default_op, default_inst, np.zeros(default_op.n)) == 0.0)


def test_energy_of_phi_plus_below_half_norm(default_inst, default_op):
    phip = np.maximum(default_inst.phi(default_op.x), 0.0)
    assert dz.energy(default_op, default_inst, phip) <= 0.5 * default_op.norm_sq(phip)


def test_energy_unbounded_along_ray(default_inst, default_op):
    phip = np.maximum(default_inst.phi(default_op.x), 0.0)
    u = vs.solve_min(default_inst, default_op)
    assert dz.energy(default_op, default_inst, 50.0 * phip) < u.energy


def test_gradient_finite_differences(default_inst, default_op, rng):
    phi = default_inst.phi(default_op.x)
    for _ in range(5):
        u = np.maximum(phi, rng.uniform(0, 2.0, default_op.n))
        u[0] = u[-1] = 0.0
        g = dz.gradient(default_op, default_inst, u)
        for _ in range(20):
            d = rng.normal(size=default_op.n)
            h = 1e-6
            fd = (dz.energy(default_op, default_inst, u + h * d)
                  - dz.energy(default_op, default_inst, u - h * d)) / (2 * h)
            assert abs(fd - g @ d) <= 1e-6 * max(abs(g @ d), 1.0)


def test_hessian_shift_matches_gradient(default_inst, default_op, rng):
    u = rng.uniform(0, 1.5, default_op.n)
    d = rng.normal(size=default_op.n)
    h = 1e-6
    fd = (dz.gradient(default_op, default_inst, u + h * d) - dz.gradient(default_op, default_inst, u - h * d)) / (2 * h)
    exact = default_op.apply(d) - dz.hessian_shift(default_op, default_inst, u) * d
    assert np.allclose(fd, exact, rtol=1e-5, atol=1e-8)


def test_energy_second_order_in_mesh():
    # u < a everywhere, so G = F on the whole line and the integrand is smooth
    inst = instance().with_lambda(0.0)
    vals = []
    for n in (257, 513, 1025):
        mesh = dz.uniform_mesh(8.0, n)
        op = dz.assemble(inst, mesh)
        vals.append(dz.energy(op, inst, 0.3 * np.exp(-mesh.nodes**2)))
    ratio = (vals[0] - vals[1]) / (vals[1] - vals[2])
    assert 3.5 < ratio < 4.5


# -- projections -------------------------------------------------------------------------


def test_project_K_examples(default_inst, default_op, rng):
    phi = default_inst.phi(default_op.x)
    u = np.maximum(phi, 0.0) + rng.uniform(0, 1, default_op.n)
    assert np.array_equal(dz.project_K(u, phi), u)
    assert np.array_equal(dz.project_K(np.full(default_op.n, -1e300), phi), phi)
    z = rng.normal(size=default_op.n)
    assert np.array_equal(dz.project_K(z, phi), np.maximum(z, phi))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 61, elements=st.floats(-5, 5)))
def test_project_K_idempotent(z):
    phi = np.linspace(-1, 1, 61)
    p = dz.project_K(z, phi)
    assert np.all(p >= phi)
    assert np.array_equal(dz.project_K(p, phi), p)


def test_project_K_A_is_metric_projection(rng):
    inst = instance(mesh={"n": 101})
    mesh, op = setup(inst)
    phi = inst.phi(mesh.nodes)
    z = rng.normal(scale=0.2, size=op.n)
    z[0] = z[-1] = 0.0
    p = dz.project_K_A(op, z, phi)
    assert np.all(p[1:-1] >= phi[1:-1])
    # obtuse-angle criterion: (z - p)^T A (v - p) <= 0 for feasible v
    for _ in range(50):
        v = np.maximum(phi, rng.normal(scale=0.3, size=op.n))
        v[0] = v[-1] = 0.0
        assert (z - p) @ op.apply(v - p) <= 1e-12


def test_discrete_function_csv_round_trip(default_inst, tmp_path):
    mesh = dz.build_mesh(default_inst, 101)
    f = dz.DiscreteFunction(mesh, np.sin(mesh.nodes))
    f.to_csv(tmp_path / "f.csv")
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "x,value"
    g = dz.DiscreteFunction.from_csv(tmp_path / "f.csv")
    assert np.array_equal(g.values, f.values) and np.array_equal(g.mesh.nodes, mesh.nodes)


def test_boundary_layer_mass_zero_for_compact_support(default_inst, default_op):
    phip = np.maximum(default_inst.phi(default_op.x), 0.0)
    assert dz.boundary_layer_mass(default_op, phip) == 0.0
