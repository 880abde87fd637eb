"""Lowest-order finite element spaces on simplicial meshes.

Families: S (continuous P1), N (edge Nedelec, first kind), RT (face
Raviart-Thomas, 3D only), P0 (piecewise constants).  One dof per entity, in
the mesh's entity numbering:

* N dof on edge E: integral of the tangential component along E, with the unit
  tangent pointing from the smaller-index vertex to the larger-index one.
* RT dof on face F: flux through F with respect to the right-hand-rule normal
  of the face's index-sorted vertex triple.

Cell vertex lists are index-sorted, so local entity slots inherit the global
orientation conventions directly.

In 2D the Raviart-Thomas family is not materialized: rotating a Nedelec field
by 90 degrees maps it onto the 2D RT space with identical dof values (normal
flux vs tangential circulation), and the callers use that identification.
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix, identity

from .mesh import _LOCAL_EDGES, _LOCAL_FACES, Mesh, ancestor_cells


class SpaceMismatchError(ValueError):
    """Operator product with incompatible dof-space tags."""


@dataclass(frozen=True)
class DofMap:
    """Dof numbering for one FE family on one mesh: dof i = entity i."""

    mesh: Mesh
    family: str
    ndof: int
    boundary_dofs: np.ndarray

    @property
    def tag(self):
        return f"{self.family}/{self.mesh.key}"


def dof_map(mesh, family):
    if family == "S":
        return DofMap(mesh, "S", mesh.num_vertices, mesh.boundary_vertices)
    if family == "N":
        return DofMap(mesh, "N", mesh.num_edges, mesh.boundary_edges)
    if family == "RT":
        if mesh.dim != 3:
            raise ValueError("RT family is materialized in 3D only")
        return DofMap(mesh, "RT", mesh.num_faces, mesh.boundary_facets)
    if family == "P0":
        return DofMap(mesh, "P0", mesh.num_cells, np.empty(0, np.int64))
    raise ValueError(f"unknown family {family!r}")


class SparseOperator:
    """scipy sparse matrix with row/column dof-space tags.

    Products check tag compatibility at call time; a mismatch is a
    programming error, not a numerical condition.
    """

    def __init__(self, mat, row_space, col_space):
        self.mat = csr_matrix(mat)
        self.row_space = row_space
        self.col_space = col_space

    @property
    def shape(self):
        return self.mat.shape

    @property
    def T(self):
        return SparseOperator(self.mat.T.tocsr(), self.col_space, self.row_space)

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            if self.col_space != other.row_space:
                raise SpaceMismatchError(
                    f"cannot apply {self.col_space!r} operator to "
                    f"{other.row_space!r} operand")
            return SparseOperator(self.mat @ other.mat, self.row_space,
                                  other.col_space)
        return self.mat @ other

    def toarray(self):
        return self.mat.toarray()


def identity_operator(space, n):
    return SparseOperator(identity(n, format="csr"), space, space)


# -- local basis evaluation ---------------------------------------------------

def barycentric_coords(mesh, cells, points):
    """Barycentric coordinates of each point within its given cell."""
    g = mesh.geometry()
    diff = points - g["bary"][cells]
    return 1.0 / (mesh.dim + 1) + np.einsum("pd,pvd->pv", diff, g["grads"][cells])

def whitney_edge_values(mesh, cells, points):
    """Values of the cell-local Nedelec basis at points, (npts, ne_loc, dim)."""
    g = mesh.geometry()
    lam = barycentric_coords(mesh, cells, points)
    grads = g["grads"][cells]
    loc = _LOCAL_EDGES[mesh.dim]
    i, j = loc[:, 0], loc[:, 1]
    return (lam[:, i, None] * grads[:, j, :] - lam[:, j, None] * grads[:, i, :])

def rt_face_values(mesh, cells, points):
    """Values of the cell-local Raviart-Thomas basis at points, (npts, 4, dim)."""
    lam = barycentric_coords(mesh, cells, points)
    grads = mesh.geometry()["grads"][cells]
    out = np.empty((len(points), 4, mesh.dim))
    for s, (a, b, c) in enumerate(_LOCAL_FACES):
        wa = np.cross(grads[:, b], grads[:, c])
        wb = np.cross(grads[:, c], grads[:, a])
        wc = np.cross(grads[:, a], grads[:, b])
        out[:, s, :] = 2.0 * (lam[:, a, None] * wa + lam[:, b, None] * wb
                              + lam[:, c, None] * wc)
    return out


# -- incidence matrices -------------------------------------------------------

def _cell_orientations(mesh):
    """Sign of each (index-sorted) cell relative to positive orientation."""
    return np.sign(mesh.geometry()["dets"]).astype(np.int64)

def gradient_incidence(mesh):
    """G: S -> N.  (G s)_E = s at larger-index endpoint minus s at smaller."""
    ne = mesh.num_edges
    rows = np.repeat(np.arange(ne), 2)
    cols = mesh.edges[:, ::-1].ravel()          # (larger, smaller) per edge
    vals = np.tile([1.0, -1.0], ne)
    mat = coo_matrix((vals, (rows, cols)), shape=(ne, mesh.num_vertices))
    return SparseOperator(mat, f"N/{mesh.key}", f"S/{mesh.key}")

def curl_incidence(mesh):
    """C: N -> P0 (2D, cell value of the scalar curl) or N -> RT (3D, flux)."""
    if mesh.dim == 2:
        # boundary cycle of the sorted triple, flipped where the triple is
        # clockwise; scaled so the P0 dof is the constant curl value
        sign = _cell_orientations(mesh)
        pattern = np.array([1.0, -1.0, 1.0])    # slots (01),(02),(12)
        vals = sign[:, None] * pattern / mesh.geometry()["vols"][:, None]
        rows = np.repeat(np.arange(mesh.num_cells), 3)
        mat = coo_matrix((vals.ravel(), (rows, mesh.cell_edges.ravel())),
                         shape=(mesh.num_cells, mesh.num_edges))
        return SparseOperator(mat, f"P0/{mesh.key}", f"N/{mesh.key}")
    nf = mesh.num_faces
    pattern = np.array([1.0, -1.0, 1.0])        # face-edge slots (01),(02),(12)
    rows = np.repeat(np.arange(nf), 3)
    vals = np.tile(pattern, nf)
    mat = coo_matrix((vals, (rows, mesh.face_edges.ravel())),
                     shape=(nf, mesh.num_edges))
    return SparseOperator(mat, f"RT/{mesh.key}", f"N/{mesh.key}")

def divergence_incidence(mesh):
    """D: RT -> P0 (3D).  Signed sum of face fluxes over cell volume."""
    if mesh.dim != 3:
        raise ValueError("divergence incidence is 3D only")
    g = mesh.geometry()
    pts = mesh.vertices[mesh.cells]             # (nc, 4, dim)
    vols = g["vols"]
    nc = mesh.num_cells
    vals = np.empty((nc, 4))
    for s, (a, b, c) in enumerate(_LOCAL_FACES):
        opp = ({0, 1, 2, 3} - {a, b, c}).pop()
        normal = np.cross(pts[:, b] - pts[:, a], pts[:, c] - pts[:, a])
        outward = np.sign(np.einsum("cd,cd->c", normal, pts[:, a] - pts[:, opp]))
        vals[:, s] = outward / vols
    rows = np.repeat(np.arange(nc), 4)
    mat = coo_matrix((vals.ravel(), (rows, mesh.cell_faces.ravel())),
                     shape=(nc, mesh.num_faces))
    return SparseOperator(mat, f"P0/{mesh.key}", f"RT/{mesh.key}")


# -- canonical interpolation / embedding --------------------------------------

def edge_interpolate(mesh, f):
    """Nedelec dofs of a vector field via the edge midpoint rule.

    Exact for fields whose tangential component is linear along each edge.
    """
    a, b = mesh.edges[:, 0], mesh.edges[:, 1]
    pa, pb = mesh.vertices[a], mesh.vertices[b]
    return np.einsum("ed,ed->e", f(0.5 * (pa + pb)), pb - pa)

def vertex_interpolate(mesh, f):
    return f(mesh.vertices)

def face_flux_interpolate(mesh, f):
    """RT dofs of a vector field via the face centroid rule (3D)."""
    pts = mesh.vertices[mesh.faces]
    centroid = pts.mean(axis=1)
    normal = 0.5 * np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0])
    return np.einsum("fd,fd->f", f(centroid), normal)

def cell_interpolate(mesh, f):
    return f(mesh.geometry()["bary"])


def coarse_to_fine(coarse, fine, family):
    """Canonical interpolation matrix of coarse functions into the fine space.

    Exact on nested meshes, since every coarse shape function restricted to a
    fine cell lies in the fine local space.
    """
    if fine.n % coarse.n:
        raise ValueError("meshes are not nested")
    drop = 1e-12
    if family == "S":
        pts = fine.vertices
        cells = coarse.locate(pts)
        vals = barycentric_coords(coarse, cells, pts)       # (np, d+1)
        cols = coarse.cells[cells]
        rows = np.repeat(np.arange(len(pts)), coarse.dim + 1)
        shape = (fine.num_vertices, coarse.num_vertices)
    elif family == "N":
        a, b = fine.edges[:, 0], fine.edges[:, 1]
        pa, pb = fine.vertices[a], fine.vertices[b]
        mid = 0.5 * (pa + pb)
        cells = coarse.locate(mid)
        psi = whitney_edge_values(coarse, cells, mid)       # (np, ne_loc, dim)
        vals = np.einsum("ped,pd->pe", psi, pb - pa)
        cols = coarse.cell_edges[cells]
        rows = np.repeat(np.arange(fine.num_edges), vals.shape[1])
        shape = (fine.num_edges, coarse.num_edges)
    elif family == "RT":
        pts = fine.vertices[fine.faces]
        centroid = pts.mean(axis=1)
        normal = 0.5 * np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0])
        cells = coarse.locate(centroid)
        phi = rt_face_values(coarse, cells, centroid)
        vals = np.einsum("pfd,pd->pf", phi, normal)
        cols = coarse.cell_faces[cells]
        rows = np.repeat(np.arange(fine.num_faces), 4)
        shape = (fine.num_faces, coarse.num_faces)
    elif family == "P0":
        anc = ancestor_cells(fine, coarse)
        mat = coo_matrix((np.ones(fine.num_cells),
                          (np.arange(fine.num_cells), anc)),
                         shape=(fine.num_cells, coarse.num_cells))
        return SparseOperator(mat, f"P0/{fine.key}", f"P0/{coarse.key}")
    else:
        raise ValueError(f"unknown family {family!r}")
    vals = vals.ravel()
    keep = np.abs(vals) > drop
    mat = coo_matrix((vals[keep], (rows.ravel()[keep], cols.ravel()[keep])),
                     shape=shape)
    return SparseOperator(mat, f"{family}/{fine.key}", f"{family}/{coarse.key}")
