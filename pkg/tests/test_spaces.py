"""Dof maps, incidence operators, interpolation and mesh-nesting embeddings."""

import numpy as np
import pytest

from curllod.mesh import build_structured_mesh, uniform_refine
from curllod.spaces import (SpaceMismatchError, barycentric_coords,
                            coarse_to_fine, curl_incidence, divergence_incidence,
                            dof_map, edge_interpolate, face_flux_interpolate,
                            gradient_incidence, identity_operator,
                            vertex_interpolate, whitney_edge_values)


def test_dof_counts():
    m = build_structured_mesh(2, 4)
    s = dof_map(m, "S")
    assert s.ndof == 25 and len(s.boundary_dofs) == 16
    nd = dof_map(m, "N")
    assert nd.ndof == 56 and len(nd.boundary_dofs) == 16
    assert dof_map(m, "P0").ndof == 32
    m3 = build_structured_mesh(3, 2)
    assert dof_map(m3, "N").ndof == m3.num_edges
    assert dof_map(m3, "RT").ndof == m3.num_faces
    with pytest.raises(ValueError):
        dof_map(m, "RT")                       # no 2D flux family
    with pytest.raises(ValueError):
        dof_map(m, "Q")


def test_operator_tags():
    m = build_structured_mesh(2, 2)
    g = gradient_incidence(m)
    assert g.row_space == "N/2d-n2" and g.col_space == "S/2d-n2"
    assert g.T.row_space == "S/2d-n2"
    other = identity_operator("S/2d-n4", 25)
    with pytest.raises(SpaceMismatchError):
        g @ other
    # plain arrays pass through
    assert (g @ np.zeros(m.num_vertices)).shape == (m.num_edges,)


def test_complex_is_exact():
    # curl grad = 0 and div curl = 0 hold exactly in floating point
    for dim in (2, 3):
        mesh = build_structured_mesh(dim, 2)
        cg = (curl_incidence(mesh) @ gradient_incidence(mesh)).mat
        assert np.abs(cg.toarray()).max() == 0.0
    mesh = build_structured_mesh(3, 2)
    dc = (divergence_incidence(mesh) @ curl_incidence(mesh)).mat
    assert np.abs(dc.toarray()).max() == 0.0


def test_curl_of_rotation_field_2d():
    mesh = build_structured_mesh(2, 3)
    e = edge_interpolate(mesh, lambda p: np.column_stack([-p[:, 1], p[:, 0]]))
    curl = curl_incidence(mesh) @ e
    assert np.allclose(curl, 2.0, rtol=0, atol=1e-12)


def test_curl_matches_face_fluxes_3d():
    # for a linear field, edge-interpolation then incidence-curl equals the
    # face fluxes of the (constant) analytic curl
    rng = np.random.default_rng(3)
    A = rng.standard_normal((3, 3))
    b = rng.standard_normal(3)
    curl_val = np.array([A[2, 1] - A[1, 2], A[0, 2] - A[2, 0], A[1, 0] - A[0, 1]])
    mesh = build_structured_mesh(3, 2)
    e = edge_interpolate(mesh, lambda p: p @ A.T + b)
    lhs = curl_incidence(mesh) @ e
    rhs = face_flux_interpolate(mesh, lambda p: np.broadcast_to(curl_val, p.shape))
    assert np.allclose(lhs, rhs, atol=1e-13)


def test_divergence_of_linear_field_3d():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((3, 3))
    mesh = build_structured_mesh(3, 2)
    flux = face_flux_interpolate(mesh, lambda p: p @ A.T)
    div = divergence_incidence(mesh) @ flux
    assert np.allclose(div, np.trace(A), rtol=1e-9)


def test_embeddings_reproduce_member_fields():
    # fields inside the coarse space embed into the fine space exactly
    coarse2 = build_structured_mesh(2, 2)
    fine2 = uniform_refine(coarse2)
    affine = lambda p: 0.25 + p @ np.array([1.5, -0.75])
    s = vertex_interpolate(coarse2, affine)
    assert np.allclose(coarse_to_fine(coarse2, fine2, "S") @ s,
                       vertex_interpolate(fine2, affine), atol=1e-14)
    ned = lambda p: np.column_stack([0.3 - 1.1 * p[:, 1], -0.8 + 1.1 * p[:, 0]])
    e = edge_interpolate(coarse2, ned)
    assert np.allclose(coarse_to_fine(coarse2, fine2, "N") @ e,
                       edge_interpolate(fine2, ned), atol=1e-14)
    coarse3 = build_structured_mesh(3, 1)
    fine3 = uniform_refine(coarse3)
    ned3 = lambda p: np.cross(np.array([0.2, -0.5, 1.0]), p) + np.array([1, 2, 3.0])
    e3 = edge_interpolate(coarse3, ned3)
    assert np.allclose(coarse_to_fine(coarse3, fine3, "N") @ e3,
                       edge_interpolate(fine3, ned3), atol=1e-14)
    rt = lambda p: 1.7 * p + np.array([0.4, -0.2, 0.9])
    f3 = face_flux_interpolate(coarse3, rt)
    assert np.allclose(coarse_to_fine(coarse3, fine3, "RT") @ f3,
                       face_flux_interpolate(fine3, rt), atol=1e-14)


def test_embedding_general_function_values():
    # fine expansion of an arbitrary coarse edge element equals the coarse
    # element pointwise
    rng = np.random.default_rng(11)
    coarse = build_structured_mesh(2, 2)
    fine = uniform_refine(coarse)
    vc = rng.standard_normal(coarse.num_edges)
    vf = coarse_to_fine(coarse, fine, "N") @ vc

    def evaluate(mesh, dofs, pts):
        cells = mesh.locate(pts)
        psi = whitney_edge_values(mesh, cells, pts)
        return np.einsum("pe,ped->pd", dofs[mesh.cell_edges[cells]], psi)

    pts = rng.random((50, 2)) * 0.98 + 0.01
    assert np.allclose(evaluate(coarse, vc, pts), evaluate(fine, vf, pts),
                       atol=1e-12)


def test_commuting_with_gradient_and_curl():
    coarse = build_structured_mesh(2, 2)
    fine = uniform_refine(coarse)
    lhs = coarse_to_fine(coarse, fine, "N") @ gradient_incidence(coarse)
    rhs = gradient_incidence(fine) @ coarse_to_fine(coarse, fine, "S")
    assert np.abs((lhs.mat - rhs.mat).toarray()).max() < 1e-12
    coarse3 = build_structured_mesh(3, 1)
    fine3 = uniform_refine(coarse3)
    lhs3 = coarse_to_fine(coarse3, fine3, "RT") @ curl_incidence(coarse3)
    rhs3 = curl_incidence(fine3) @ coarse_to_fine(coarse3, fine3, "N")
    assert np.abs((lhs3.mat - rhs3.mat).toarray()).max() < 1e-12


def test_interpolation_duality():
    # edge interpolation inverts pointwise evaluation of edge elements
    rng = np.random.default_rng(5)
    for dim in (2, 3):
        mesh = build_structured_mesh(dim, 2)
        v = rng.standard_normal(mesh.num_edges)

        def field(pts):
            cells = mesh.locate(pts)
            psi = whitney_edge_values(mesh, cells, pts)
            return np.einsum("pe,ped->pd", v[mesh.cell_edges[cells]], psi)

        assert np.allclose(edge_interpolate(mesh, field), v, atol=1e-13)


def test_barycentric_partition_of_unity():
    rng = np.random.default_rng(6)
    mesh = build_structured_mesh(3, 2)
    pts = rng.random((40, 3))
    lam = barycentric_coords(mesh, mesh.locate(pts), pts)
    assert np.allclose(lam.sum(axis=1), 1.0, atol=1e-13)
    assert lam.min() > -1e-12
