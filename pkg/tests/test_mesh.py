from fractions import Fraction

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from hicon.geometry import CompositeGeometry, InclusionShape
from hicon.material import QuadForm
from hicon.mesh import CellMesh, Grid, MacroMesh, SolverError, assemble_quadratic, solve_spd

from conftest import make_mesh


def loop_energy_oracle(grid, values, Q, region=None):
    """Per-element loop: gradient from the 2x2 system of edge differences."""
    total = 0.0
    for e, tri in enumerate(grid.elements):
        if region is not None and not region[e]:
            continue
        p = grid.nodes[tri]
        u = values[tri]
        D = np.array([p[1] - p[0], p[2] - p[0]])  # rows are edges
        dU = np.array([u[1] - u[0], u[2] - u[0]])
        G = np.linalg.solve(D, dU).T  # G @ edge = du
        area = 0.5 * abs(np.linalg.det(D))
        total += area * 0.5 * np.einsum("ij,ijkl,kl->", G, Q.tensor, G)
    return total


def test_identity_field_has_identity_gradients():
    g = Grid(5, 3, 0.2)
    assert np.allclose(g.gradients(g.nodes), np.eye(2), atol=1e-14)


def test_shear_field_gradient():
    g = Grid(4, 4, 0.25)
    vals = np.stack([g.nodes[:, 1], 0 * g.nodes[:, 0]], 1)
    assert np.allclose(g.gradients(vals), [[0, 1], [0, 0]], atol=1e-14)


def test_gradient_error_is_first_order():
    errs = []
    for n in (32, 64):
        g = Grid(n, n, 1.0 / n)
        vals = np.stack([np.sin(2 * np.pi * g.nodes[:, 0]), 0 * g.nodes[:, 0]], 1)
        exact = 2 * np.pi * np.cos(2 * np.pi * g.barycenters[:, 0])
        G = g.gradients(vals)
        errs.append(np.max(np.abs(G[:, 0, 0] - exact)) + np.max(np.abs(G[:, 0, 1])))
    assert errs[1] <= 0.6 * errs[0]
    assert errs[1] <= 10.0 / 64


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_patch_test_linear_fields(c):
    g = Grid(6, 4, 0.125)
    F = np.array(c[:4]).reshape(2, 2)
    vals = g.nodes @ F.T + np.array(c[4:])
    assert np.allclose(g.gradients(vals), F, atol=1e-12)
    Q = QuadForm.isotropic(1.0, 1.0)
    A = assemble_quadratic(g, Q)
    exact = float(Q(F)) * 0.75 * 0.5
    assert abs(vals.ravel() @ (A @ vals.ravel()) - exact) <= 1e-12 * max(1.0, abs(exact))
    pts = np.random.default_rng(0).uniform(0, 1, size=(50, 2)) * [0.75, 0.5]
    assert np.allclose(g.interpolate(vals, pts), pts @ F.T + np.array(c[4:]), atol=1e-12)


def test_assembled_energy_of_identity_is_dimension():
    g = Grid(8, 8, 1 / 8)
    A = assemble_quadratic(g, QuadForm(np.einsum("ik,jl->ijkl", np.eye(2), np.eye(2)) * 2))  # Q(G) = |G|^2
    v = g.nodes.ravel()
    assert v @ (A @ v) == pytest.approx(2.0, abs=1e-12)


def test_rotation_generator_has_no_symmetric_energy():
    g = Grid(8, 8, 1 / 8)
    A = assemble_quadratic(g, QuadForm.sym_squared())
    v = np.stack([g.nodes[:, 1], -g.nodes[:, 0]], 1).ravel()
    assert abs(v @ (A @ v)) <= 1e-13


def test_assembly_matches_loop_oracle(rng):
    g = Grid(8, 8, 1 / 8)
    Q = QuadForm.isotropic(1.0, 1.0)
    v = rng.normal(size=(g.n_nodes, 2))
    A = assemble_quadratic(g, Q)
    ref = loop_energy_oracle(g, v, Q)
    assert abs(v.ravel() @ (A @ v.ravel()) - ref) <= 1e-12 * abs(ref)


def test_region_assembly_and_empty_region(rng):
    m = make_mesh(Fraction(1, 4))
    Q = QuadForm.isotropic(0.5, 1.0)
    v = rng.normal(size=(m.n_nodes, 2))
    A = assemble_quadratic(m, Q, region=m.soft)
    ref = loop_energy_oracle(m, v, Q, region=m.soft)
    assert abs(v.ravel() @ (A @ v.ravel()) - ref) <= 1e-12 * abs(ref)
    Z = assemble_quadratic(m, Q, region=np.zeros(m.n_elements, dtype=bool))
    assert Z.nnz == 0 or np.max(np.abs(Z.data)) == 0


def test_operator_symmetric_and_psd(rng):
    g = Grid(6, 6, 1 / 6)
    A = assemble_quadratic(g, QuadForm.sym_squared())
    assert abs(A - A.T).max() <= 1e-12 * abs(A).max()
    for _ in range(10):
        v = rng.normal(size=g.n_dofs)
        assert v @ (A @ v) >= -1e-12


def test_energy_converges_at_second_order():
    # int |grad u|^2 for u = sin(pi x) sin(pi y) e1 is pi^2 / 2
    Q = QuadForm(np.einsum("ik,jl->ijkl", np.eye(2), np.eye(2)) * 2)
    errs, hs = [], []
    for n in (8, 16, 32, 64):
        g = Grid(n, n, 1 / n)
        u = np.stack([np.sin(np.pi * g.nodes[:, 0]) * np.sin(np.pi * g.nodes[:, 1]), 0 * g.nodes[:, 0]], 1).ravel()
        errs.append(abs(u @ (assemble_quadratic(g, Q) @ u) - np.pi ** 2 / 2))
        hs.append(1 / n)
    slopes = np.diff(np.log(errs)) / np.diff(np.log(hs))
    assert np.all(slopes >= 1.9)


def test_mass_matrix_integrates_exactly():
    g = Grid(5, 5, 0.2)
    x = g.nodes[:, 0]
    # int_0^1 int_0^1 x^2 = 1/3, exact for the P1 interpolant of x
    assert g.l2_norm_sq(x) == pytest.approx(1 / 3, rel=1e-13)


def test_solve_identity_and_zero_rhs(rng):
    b = rng.normal(size=20)
    assert np.allclose(solve_spd(sp.identity(20, format="csr"), b), b, atol=1e-12)
    assert np.all(solve_spd(sp.identity(20, format="csr"), np.zeros(20)) == 0)


def test_solve_matches_dense_oracle(rng):
    g = Grid(24, 4, 1 / 24)  # a strip
    A = 2 * assemble_quadratic(g, QuadForm(np.einsum("ik,jl->ijkl", np.eye(2), np.eye(2)) * 2))
    bn = g.boundary_nodes("left-edge")
    cons = np.concatenate([2 * bn, 2 * bn + 1])
    b = g.load_vector(np.ones((g.n_elements, 2))).ravel()
    x = solve_spd(A, b, cons)
    free = np.setdiff1d(np.arange(g.n_dofs), cons)
    assert free.size <= 500
    ref = np.zeros_like(b)
    ref[free] = np.linalg.solve(A.toarray()[np.ix_(free, free)], b[free])
    assert np.max(np.abs(x - ref)) <= 1e-9 * np.max(np.abs(ref))
    assert np.all(x[cons] == 0)
    # Galerkin orthogonality against constraint-respecting test vectors
    r = A @ x - b
    for _ in range(5):
        c = rng.normal(size=b.size)
        c[cons] = 0
        assert abs(c @ r) <= 1e-10 * np.linalg.norm(b) * np.linalg.norm(c) * 10


def test_solver_error_carries_residual():
    n = 200
    A = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()
    with pytest.raises(SolverError) as info:
        solve_spd(A, np.ones(n), maxiter=3)
    assert info.value.residual > 1e-3


def test_macro_mesh_tags_match_geometry():
    m = make_mesh(Fraction(1, 8))
    from hicon.geometry import classify_points
    assert np.array_equal(m.soft, classify_points(m.geom, m.barycenters))
    tags = m.node_tags()
    assert set(tags[m.gamma_nodes]) == {"on_gamma"}
    inc = m.nodes[m.inclusion_boundary_nodes] / m.eps
    y = inc - np.floor(inc)
    assert np.allclose(np.max(np.abs(y - 0.5), axis=1), 0.25)  # on the inclusion boundary


def test_macro_mesh_rejects_bad_m():
    with pytest.raises(ValueError):
        MacroMesh(CompositeGeometry(), 5)


def test_cell_mesh_periodic_map_and_volume():
    c = CellMesh(16, InclusionShape())
    rep = c.nodes[np.unique(c.periodic, return_index=True)[1]]
    assert np.allclose(np.mod(c.nodes, 1.0), rep[c.periodic] % 1.0)
    assert c.soft_volume == pytest.approx(0.25, abs=1e-14)
    vols = [CellMesh(n, InclusionShape("centered-disk", 0.25)).soft_volume for n in (16, 64)]
    assert abs(vols[1] - np.pi / 16) < abs(vols[0] - np.pi / 16)


def test_unfolding_index_tables_are_consistent():
    m = make_mesh(Fraction(1, 4))
    local = m.cell.nodes
    for c, (a, b) in enumerate(m.cells):
        assert np.allclose(m.nodes[m.cell_nodes[c]], m.eps * (local + [a, b]))
        assert np.array_equal(m.soft[m.cell_elements[c]], m.cell.soft & bool(m.cell_is_interior[c]))
