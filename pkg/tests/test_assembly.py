"""Assembled forms checked against exact rational symbolic integration."""

import numpy as np
import pytest
import sympy as sp

from curllod.assembly import (Checkerboard, assemble_B, assemble_B_T,
                              assemble_coupling, assemble_load, quadrature_rule)
from curllod.mesh import build_structured_mesh
from curllod.spaces import gradient_incidence

# local dof slots on index-sorted cells, restated independently of the library
EDGE_SLOTS = {2: [(0, 1), (0, 2), (1, 2)],
              3: [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]}
FACE_SLOTS = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)]


def symbolic_cell(mesh, cell):
    """Exact barycentric functions and an exact integrator for one cell."""
    dim = mesh.dim
    syms = sp.symbols("x y z")[:dim]
    pts = [[sp.nsimplify(float(c), rational=True) for c in mesh.vertices[v]]
           for v in mesh.cells[cell]]
    M = sp.Matrix([[1, *p] for p in pts])
    lam = []
    for i in range(dim + 1):
        e = sp.zeros(dim + 1, 1)
        e[i] = 1
        c = M.solve(e)
        lam.append(c[0] + sum(c[k + 1] * syms[k] for k in range(dim)))
    p0 = sp.Matrix(pts[0])
    J = sp.Matrix.hstack(*[sp.Matrix(pts[k + 1]) - p0 for k in range(dim)])
    det = sp.Abs(J.det())
    ref = sp.symbols("u v w")[:dim]
    sub = dict(zip(syms, p0 + J * sp.Matrix(ref)))

    def integrate(expr):
        poly = sp.Poly(sp.expand(expr.subs(sub)), *ref)
        total = sp.Integer(0)
        for monom, coeff in poly.terms():
            num = sp.prod([sp.factorial(k) for k in monom])
            total += coeff * num / sp.factorial(sum(monom) + dim)
        return total * det

    return syms, lam, integrate


def symbolic_whitney(syms, lam, dim):
    """Edge basis lambda_i grad(lambda_j) - lambda_j grad(lambda_i)."""
    out = []
    for i, j in EDGE_SLOTS[dim]:
        gi = [sp.diff(lam[i], s) for s in syms]
        gj = [sp.diff(lam[j], s) for s in syms]
        out.append([lam[i] * gj[d] - lam[j] * gi[d] for d in range(dim)])
    return out


def symbolic_curl(syms, psi, dim):
    if dim == 2:
        return sp.diff(psi[1], syms[0]) - sp.diff(psi[0], syms[1])
    x, y, z = syms
    return [sp.diff(psi[2], y) - sp.diff(psi[1], z),
            sp.diff(psi[0], z) - sp.diff(psi[2], x),
            sp.diff(psi[1], x) - sp.diff(psi[0], y)]


def symbolic_rt(syms, lam):
    """Face basis 2(lambda_a w_a + lambda_b w_b + lambda_c w_c), 3D."""
    grads = [sp.Matrix([sp.diff(l, s) for s in syms]) for l in lam]
    out = []
    for a, b, c in FACE_SLOTS:
        wa, wb, wc = (grads[b].cross(grads[c]), grads[c].cross(grads[a]),
                      grads[a].cross(grads[b]))
        out.append(list(2 * (lam[a] * wa + lam[b] * wb + lam[c] * wc)))
    return out


def oracle_cell_matrix(mesh, cell, mu, kappa):
    dim = mesh.dim
    syms, lam, integrate = symbolic_cell(mesh, cell)
    psi = symbolic_whitney(syms, lam, dim)
    ne = len(psi)
    out = np.empty((ne, ne))
    for a in range(ne):
        for b in range(a, ne):
            ca, cb = symbolic_curl(syms, psi[a], dim), \
                symbolic_curl(syms, psi[b], dim)
            curl = integrate(ca * cb) if dim == 2 else \
                sum(integrate(ca[d] * cb[d]) for d in range(3))
            mass = sum(integrate(psi[a][d] * psi[b][d]) for d in range(dim))
            out[a, b] = out[b, a] = mu * float(curl) + kappa * float(mass)
    return out


def extract_block(op, rows, cols):
    return op.mat.toarray()[np.ix_(rows, cols)]


def test_cell_matrix_oracle_2d():
    mesh = build_structured_mesh(2, 2)
    for cell, mu, kappa in ((0, 1.0, 1.0), (3, 3.7, 0.05), (5, 0.001, 2.0)):
        got = extract_block(assemble_B_T(mesh, mu, kappa, cell),
                            mesh.cell_edges[cell], mesh.cell_edges[cell])
        want = oracle_cell_matrix(mesh, cell, mu, kappa)
        assert np.abs(got - want).max() <= 1e-13 * np.abs(want).max()


def test_cell_matrix_oracle_3d():
    mesh = build_structured_mesh(3, 1)
    for cell, mu, kappa in ((0, 1.3, 0.8), (4, 1.0, 1.0)):
        got = extract_block(assemble_B_T(mesh, mu, kappa, cell),
                            mesh.cell_edges[cell], mesh.cell_edges[cell])
        want = oracle_cell_matrix(mesh, cell, mu, kappa)
        assert np.abs(got - want).max() <= 1e-13 * np.abs(want).max()


def test_pairing_oracles_2d():
    mesh = build_structured_mesh(2, 2)
    cell = 4
    syms, lam, integrate = symbolic_cell(mesh, cell)
    psi = symbolic_whitney(syms, lam, 2)
    edges, verts = mesh.cell_edges[cell], mesh.cells[cell]
    ge = extract_block(assemble_coupling(mesh, "grad-edge", cells=[cell]),
                       verts, edges)
    want = np.array([[float(sum(integrate(sp.diff(lam[z], syms[d]) * psi[e][d])
                                for d in range(2)))
                      for e in range(3)] for z in range(3)])
    assert np.abs(ge - want).max() <= 1e-14
    # rotation pairing: (psi_y, -psi_x) . psi
    re = extract_block(assemble_coupling(mesh, "rot-edge", cells=[cell]),
                       edges, edges)
    want = np.array([[float(integrate(psi[a][1] * psi[b][0]
                                      - psi[a][0] * psi[b][1]))
                      for b in range(3)] for a in range(3)])
    assert np.abs(re - want).max() <= 1e-14


def test_pairing_oracles_3d():
    mesh = build_structured_mesh(3, 1)
    cell = 2
    syms, lam, integrate = symbolic_cell(mesh, cell)
    psi = symbolic_whitney(syms, lam, 3)
    phi = symbolic_rt(syms, lam)
    faces, edges = mesh.cell_faces[cell], mesh.cell_edges[cell]
    ff = extract_block(assemble_coupling(mesh, "mass-flux", cells=[cell]),
                       faces, faces)
    want = np.array([[float(sum(integrate(phi[a][d] * phi[b][d])
                                for d in range(3)))
                      for b in range(4)] for a in range(4)])
    assert np.abs(ff - want).max() <= 1e-13 * np.abs(want).max()
    fe = extract_block(assemble_coupling(mesh, "mass-flux-edge", cells=[cell]),
                       faces, edges)
    want = np.array([[float(sum(integrate(phi[a][d] * psi[b][d])
                                for d in range(3)))
                      for b in range(6)] for a in range(4)])
    assert np.abs(fe - want).max() <= 1e-13


def test_edge_grad_pairing_matches_incidence():
    # interpolating nodal gradients into the edge space is exact, so the
    # mixed pairing factors through the gradient incidence matrix
    for dim in (2, 3):
        mesh = build_structured_mesh(dim, 2)
        eg = assemble_coupling(mesh, "edge-grad")
        via = assemble_coupling(mesh, "mass-edge") @ gradient_incidence(mesh)
        assert np.abs((eg.mat - via.mat).toarray()).max() < 1e-14
        gt = assemble_coupling(mesh, "grad-edge")
        assert np.abs((gt.mat - eg.T.mat).toarray()).max() < 1e-15


def test_load_oracle():
    mesh = build_structured_mesh(2, 2)
    cell = 1
    syms, lam, integrate = symbolic_cell(mesh, cell)
    psi = symbolic_whitney(syms, lam, 2)
    x, y = syms
    fsym = (x**2 * y**2, x**4)
    f = lambda p: np.column_stack([p[:, 0]**2 * p[:, 1]**2, p[:, 0]**4])
    got = assemble_load(mesh, f, cells=[cell])[mesh.cell_edges[cell]]
    want = np.array([float(sum(integrate(fsym[d] * psi[e][d])
                               for d in range(2))) for e in range(3)])
    assert np.abs(got - want).max() <= 1e-14
    gsym = x**2 * y**2
    g = lambda p: p[:, 0]**2 * p[:, 1]**2
    got = assemble_load(mesh, g, family="S", cells=[cell])[mesh.cells[cell]]
    want = np.array([float(integrate(gsym * lam[z])) for z in range(3)])
    assert np.abs(got - want).max() <= 1e-14


def test_load_oracle_3d():
    mesh = build_structured_mesh(3, 1)
    cell = 3
    syms, lam, integrate = symbolic_cell(mesh, cell)
    psi = symbolic_whitney(syms, lam, 3)
    x, y, z = syms
    fsym = (x * x, y * z, x * y)
    f = lambda p: np.column_stack([p[:, 0]**2, p[:, 1] * p[:, 2],
                                   p[:, 0] * p[:, 1]])
    got = assemble_load(mesh, f, cells=[cell])[mesh.cell_edges[cell]]
    want = np.array([float(sum(integrate(fsym[d] * psi[e][d])
                               for d in range(3))) for e in range(6)])
    assert np.abs(got - want).max() <= 1e-14


def test_quadrature_exactness():
    # conical-product rule integrates total degree 5 exactly:
    # mean of prod(lam^k) over the simplex equals d! prod(k!)/(sum k + d)!
    for dim in (2, 3):
        lam, w = quadrature_rule(dim)
        assert abs(w.sum() - 1.0) < 1e-14
        ks = [(a, b, 5 - a - b) for a in range(6) for b in range(6 - a)] \
            if dim == 2 else \
            [(a, b, c, 5 - a - b - c) for a in range(6)
             for b in range(6 - a) for c in range(6 - a - b)]
        for k in ks:
            got = float(w @ np.prod(lam ** np.array(k), axis=1))
            want = float(sp.factorial(dim) * sp.prod(
                [sp.factorial(i) for i in k]) / sp.factorial(sum(k) + dim))
            assert abs(got - want) <= 1e-14


def test_checkerboard_values():
    cb = Checkerboard(2, 4)
    pts = np.array([[0.1, 0.1], [0.3, 0.1], [0.3, 0.3], [0.99, 0.99],
                    [1.0, 1.0], [0.0, 0.0]])
    assert np.array_equal(cb(pts), [1.0, 1e-3, 1.0, 1.0, 1.0, 1.0])
    assert np.array_equal(Checkerboard(2, 1)(pts), np.ones(6))
    cb3 = Checkerboard(3, 2, value_even=5.0, value_odd=7.0)
    assert cb3(np.array([[0.2, 0.2, 0.2]]))[0] == 5.0
    assert cb3(np.array([[0.7, 0.2, 0.2]]))[0] == 7.0
    with pytest.raises(ValueError):
        Checkerboard(2, 0)


def test_checkerboard_mesh_alignment():
    cb = Checkerboard(2, 4)
    with pytest.raises(ValueError):
        cb.cell_values(build_structured_mesh(2, 6))
    mesh = build_structured_mesh(2, 8)
    vals = cb.cell_values(mesh)
    assert set(np.unique(vals)) == {1e-3, 1.0}
    # value is constant within each block
    bary = mesh.geometry()["bary"]
    block = np.floor(bary * 4).astype(int)
    for bx in range(4):
        for by in range(4):
            sel = (block[:, 0] == bx) & (block[:, 1] == by)
            assert len(np.unique(vals[sel])) == 1


def test_cell_sums_match_global():
    mesh = build_structured_mesh(2, 4)
    mu = Checkerboard(2, 2)
    kappa = Checkerboard(2, 2, value_even=2.0, value_odd=0.5)
    full = assemble_B(mesh, mu, kappa).mat
    parts = sum(assemble_B_T(mesh, mu, kappa, c).mat
                for c in range(mesh.num_cells))
    assert np.abs((full - parts).toarray()).max() <= 1e-14
    sub = assemble_B(mesh, mu, kappa, cells=[0, 1]).mat
    two = assemble_B_T(mesh, mu, kappa, 0).mat + \
        assemble_B_T(mesh, mu, kappa, 1).mat
    assert np.abs((sub - two).toarray()).max() <= 1e-15


def test_load_subset_agreement():
    rng = np.random.default_rng(9)
    f = lambda p: np.column_stack([np.sin(p[:, 0]), np.cos(p[:, 1])])
    mesh = build_structured_mesh(2, 3)
    full = assemble_load(mesh, f)
    cells = rng.permutation(mesh.num_cells)
    parts = sum(assemble_load(mesh, f, cells=[c]) for c in cells)
    assert np.abs(full - parts).max() <= 1e-15


def test_symmetry_and_positivity():
    mesh = build_structured_mesh(2, 4)
    B = assemble_B(mesh, Checkerboard(2, 2), Checkerboard(2, 2)).mat
    assert np.abs((B - B.T).toarray()).max() == 0.0
    assert np.linalg.eigvalsh(B.toarray()).min() > 0.0


def test_mean_vector():
    mesh = build_structured_mesh(2, 4)
    mv = assemble_coupling(mesh, "mean")
    assert mv.shape == (mesh.num_vertices,)
    assert abs(mv.sum() - 1.0) < 1e-14          # hat functions sum to one
    assert mv.min() > 0.0


def test_weighted_form_decomposition():
    # mu,kappa = 1 reduces the weighted form to the two unweighted pairings
    for dim in (2, 3):
        mesh = build_structured_mesh(dim, 2)
        B = assemble_B(mesh, 1.0, 1.0).mat
        parts = assemble_coupling(mesh, "curl-curl").mat + \
            assemble_coupling(mesh, "mass-edge").mat
        assert np.abs((B - parts).toarray()).max() <= \
            1e-15 * np.abs(B.toarray()).max()
