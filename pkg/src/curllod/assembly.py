"""Matrix and vector assembly for the lowest-order spaces.

Every local integrand here is a product of barycentric-linear factors, so the
cell integrals use the closed form  int_T lambda_p lambda_q dx =
|T| (1 + delta_pq) / ((d+1)(d+2))  instead of quadrature; assembled matrices
are exact for piecewise-constant coefficients.  Load vectors use a fixed
conical-product rule (3 points per axis, exact to polynomial degree 5).

All assemblers accept an optional cell subset and return matrices indexed by
the full global dof numbering, holding contributions from the listed cells
only.  That is the composite-quadrature path used for patch-restricted and
coarse-against-fine integrals throughout.
"""

import numpy as np
from scipy.sparse import coo_matrix
from scipy.special import roots_jacobi

from .mesh import _LOCAL_EDGES, _LOCAL_FACES
from .spaces import SparseOperator

_ROT90 = np.array([[0.0, 1.0], [-1.0, 0.0]])   # maps tangents to normals in 2D


class Checkerboard:
    """Checkerboard coefficient on [0,1]^dim.

    The block index along each axis is floor(x_i * block_count), clamped into
    [0, block_count-1]; an even index sum gives value_even, odd gives
    value_odd.
    """

    def __init__(self, dim, block_count, value_even=1.0, value_odd=1e-3):
        if block_count < 1:
            raise ValueError("block_count must be positive")
        self.dim = dim
        self.block_count = block_count
        self.value_even = value_even
        self.value_odd = value_odd

    def __call__(self, points):
        points = np.atleast_2d(points)
        idx = np.clip(np.floor(points * self.block_count).astype(np.int64),
                      0, self.block_count - 1)
        odd = idx.sum(axis=1) % 2 == 1
        return np.where(odd, self.value_odd, self.value_even)

    def cell_values(self, mesh):
        """Per-cell values at barycenters; blocks must align with the mesh."""
        if mesh.n % self.block_count:
            raise ValueError(
                f"coefficient blocks ({self.block_count}) do not align with "
                f"mesh (n={mesh.n})")
        return self(mesh.geometry()["bary"])


def cell_coefficient(mesh, coeff, cells=None):
    """Per-cell coefficient values: scalar, Checkerboard, or callable."""
    if np.isscalar(coeff):
        vals = np.full(mesh.num_cells, float(coeff))
    elif isinstance(coeff, Checkerboard):
        vals = coeff.cell_values(mesh)
    else:
        vals = np.asarray(coeff(mesh.geometry()["bary"]), dtype=float)
    return vals if cells is None else vals[cells]


# -- per-cell basis data -------------------------------------------------------

def _nedelec_tensors(mesh):
    """Whitney edge basis as barycentric-linear fields, plus constant curls."""
    def build():
        g = mesh.geometry()
        grads = g["grads"]
        nc = mesh.num_cells
        loc = _LOCAL_EDGES[mesh.dim]
        ne = len(loc)
        coef = np.zeros((nc, ne, mesh.dim + 1, mesh.dim))
        for s, (i, j) in enumerate(loc):
            coef[:, s, i, :] = grads[:, j, :]
            coef[:, s, j, :] = -grads[:, i, :]
        if mesh.dim == 2:
            curls = np.empty((nc, ne))
            for s, (i, j) in enumerate(loc):
                curls[:, s] = 2.0 * (grads[:, i, 0] * grads[:, j, 1]
                                     - grads[:, i, 1] * grads[:, j, 0])
        else:
            curls = np.empty((nc, ne, 3))
            for s, (i, j) in enumerate(loc):
                curls[:, s, :] = 2.0 * np.cross(grads[:, i, :], grads[:, j, :])
        return coef, curls
    return mesh._memo("nedelec_tensors", build)


def _rt_tensors(mesh):
    """Raviart-Thomas face basis as barycentric-linear fields (3D)."""
    def build():
        grads = mesh.geometry()["grads"]
        nc = mesh.num_cells
        coef = np.zeros((nc, 4, 4, 3))
        for s, (a, b, c) in enumerate(_LOCAL_FACES):
            coef[:, s, a, :] = 2.0 * np.cross(grads[:, b, :], grads[:, c, :])
            coef[:, s, b, :] = 2.0 * np.cross(grads[:, c, :], grads[:, a, :])
            coef[:, s, c, :] = 2.0 * np.cross(grads[:, a, :], grads[:, b, :])
        return coef
    return mesh._memo("rt_tensors", build)


def _bary_mass(mesh, cells):
    """int_T lambda_p lambda_q dx for the selected cells, (nc, d+1, d+1)."""
    d = mesh.dim
    vols = mesh.geometry()["vols"][cells]
    base = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    return vols[:, None, None] * base


def _scatter(blocks, rows, cols, shape):
    r = np.broadcast_to(rows[:, :, None], blocks.shape)
    c = np.broadcast_to(cols[:, None, :], blocks.shape)
    return coo_matrix((blocks.ravel(), (r.ravel(), c.ravel())),
                      shape=shape).tocsr()


def _cells_index(mesh, cells):
    return np.arange(mesh.num_cells) if cells is None else \
        np.asarray(cells, dtype=np.int64)


# -- pairings ------------------------------------------------------------------

def assemble_coupling(mesh, kind, cells=None):
    """Unweighted pairing matrix over the listed cells (global indexing).

    kinds: 'grad-grad', 'mass-scalar', 'grad-edge', 'edge-grad', 'curl-curl',
    'mass-edge', 'rot-edge' (2D), 'mass-flux', 'mass-flux-edge' (3D).
    'mean' returns the vector of hat-function integrals instead.
    """
    cells = _cells_index(mesh, cells)
    g = mesh.geometry()
    vols = g["vols"][cells]
    grads = g["grads"][cells]
    d = mesh.dim
    key = mesh.key
    everts = mesh.cells[cells]
    eedges = mesh.cell_edges[cells]

    if kind == "mean":
        out = np.zeros(mesh.num_vertices)
        np.add.at(out, everts.ravel(),
                  np.repeat(vols / (d + 1), d + 1))
        return out

    if kind in ("grad-grad", "mass-scalar"):
        if kind == "grad-grad":
            blocks = vols[:, None, None] * np.einsum("cpd,cqd->cpq", grads, grads)
        else:
            blocks = _bary_mass(mesh, cells)
        mat = _scatter(blocks, everts, everts,
                       (mesh.num_vertices, mesh.num_vertices))
        return SparseOperator(mat, f"S/{key}", f"S/{key}")

    if kind in ("grad-edge", "edge-grad"):
        cn, _ = _nedelec_tensors(mesh)
        cn = cn[cells]
        # int grad(lambda_z) . psi_e = sum_q int(lambda_q) grad(lambda_z).cn[e,q]
        blocks = np.einsum("czd,ceqd->cze", grads, cn) * \
            (vols / (d + 1))[:, None, None]
        if kind == "edge-grad":
            mat = _scatter(np.swapaxes(blocks, 1, 2), eedges, everts,
                           (mesh.num_edges, mesh.num_vertices))
            return SparseOperator(mat, f"N/{key}", f"S/{key}")
        mat = _scatter(blocks, everts, eedges,
                       (mesh.num_vertices, mesh.num_edges))
        return SparseOperator(mat, f"S/{key}", f"N/{key}")

    if kind in ("curl-curl", "mass-edge", "rot-edge"):
        cn, curls = _nedelec_tensors(mesh)
        cn, curls = cn[cells], curls[cells]
        if kind == "curl-curl":
            if d == 2:
                blocks = vols[:, None, None] * np.einsum("ca,cb->cab",
                                                         curls, curls)
            else:
                blocks = vols[:, None, None] * np.einsum("cad,cbd->cab",
                                                         curls, curls)
        elif kind == "mass-edge":
            blocks = np.einsum("capd,cbqd,cpq->cab", cn, cn,
                               _bary_mass(mesh, cells))
        else:
            if d != 2:
                raise ValueError("rot-edge pairing is 2D only")
            rot = np.einsum("de,cape->capd", _ROT90, cn)
            blocks = np.einsum("capd,cbqd,cpq->cab", rot, cn,
                               _bary_mass(mesh, cells))
        mat = _scatter(blocks, eedges, eedges,
                       (mesh.num_edges, mesh.num_edges))
        return SparseOperator(mat, f"N/{key}", f"N/{key}")

    if kind in ("mass-flux", "mass-flux-edge"):
        if d != 3:
            raise ValueError(f"{kind} pairing is 3D only")
        cr = _rt_tensors(mesh)[cells]
        efaces = mesh.cell_faces[cells]
        bm = _bary_mass(mesh, cells)
        if kind == "mass-flux":
            blocks = np.einsum("capd,cbqd,cpq->cab", cr, cr, bm)
            mat = _scatter(blocks, efaces, efaces,
                           (mesh.num_faces, mesh.num_faces))
            return SparseOperator(mat, f"RT/{key}", f"RT/{key}")
        cn, _ = _nedelec_tensors(mesh)
        blocks = np.einsum("capd,cbqd,cpq->cab", cr, cn[cells], bm)
        mat = _scatter(blocks, efaces, eedges,
                       (mesh.num_faces, mesh.num_edges))
        return SparseOperator(mat, f"RT/{key}", f"N/{key}")

    raise ValueError(f"unknown pairing kind {kind!r}")


def assemble_B(mesh, mu, kappa, cells=None):
    """Weighted curl-curl plus mass form on the edge space.

    B[e,f] = int mu curl(psi_e).curl(psi_f) + kappa psi_e.psi_f over the
    listed cells, coefficients evaluated at cell barycenters.
    """
    cells = _cells_index(mesh, cells)
    mu_c = cell_coefficient(mesh, mu, cells)
    ka_c = cell_coefficient(mesh, kappa, cells)
    g = mesh.geometry()
    vols = g["vols"][cells]
    cn, curls = _nedelec_tensors(mesh)
    cn, curls = cn[cells], curls[cells]
    if mesh.dim == 2:
        curl_blocks = (mu_c * vols)[:, None, None] * \
            np.einsum("ca,cb->cab", curls, curls)
    else:
        curl_blocks = (mu_c * vols)[:, None, None] * \
            np.einsum("cad,cbd->cab", curls, curls)
    mass_blocks = ka_c[:, None, None] * \
        np.einsum("capd,cbqd,cpq->cab", cn, cn, _bary_mass(mesh, cells))
    eedges = mesh.cell_edges[cells]
    mat = _scatter(curl_blocks + mass_blocks, eedges, eedges,
                   (mesh.num_edges, mesh.num_edges))
    return SparseOperator(mat, f"N/{mesh.key}", f"N/{mesh.key}")


def assemble_B_T(mesh, mu, kappa, cell):
    """Single-cell restriction of the B form (nonzeros on that cell's edges)."""
    return assemble_B(mesh, mu, kappa, cells=np.array([cell]))


# -- load vectors ---------------------------------------------------------------

def _gauss01(n, alpha):
    """Gauss rule for int_0^1 f(t) (1-t)^alpha dt."""
    x, w = roots_jacobi(n, alpha, 0.0)
    return (x + 1.0) / 2.0, w / 2.0 ** (alpha + 1)

def quadrature_rule(dim, n=3):
    """Conical-product rule on the simplex, degree 2n-1; weights sum to 1."""
    if dim == 2:
        u, wu = _gauss01(n, 1.0)
        v, wv = _gauss01(n, 0.0)
        x = np.repeat(u, n)
        y = np.tile(v, n) * (1.0 - x)
        w = np.repeat(wu, n) * np.tile(wv, n)
        lam = np.column_stack([1.0 - x - y, x, y])
    else:
        u, wu = _gauss01(n, 2.0)
        v, wv = _gauss01(n, 1.0)
        t, wt = _gauss01(n, 0.0)
        x = np.repeat(u, n * n)
        y = np.tile(np.repeat(v, n), n) * (1.0 - x)
        z = np.tile(t, n * n) * (1.0 - x) * (1.0 - np.tile(np.repeat(v, n), n))
        w = np.repeat(wu, n * n) * np.tile(np.repeat(wv, n), n) * np.tile(wt, n * n)
        lam = np.column_stack([1.0 - x - y - z, x, y, z])
    return lam, w / w.sum()


def assemble_load(mesh, f, family="N", cells=None):
    """Load vector (f, basis) via the fixed conical-product rule (degree 5).

    f maps an (npts, dim) array of points to values: vectors for family 'N',
    scalars for family 'S'.
    """
    cells = _cells_index(mesh, cells)
    lam, w = quadrature_rule(mesh.dim)
    pts = np.einsum("kp,cpd->ckd", lam, mesh.vertices[mesh.cells[cells]])
    vols = mesh.geometry()["vols"][cells]
    fv = np.asarray(f(pts.reshape(-1, mesh.dim)))
    if family == "N":
        fv = fv.reshape(len(cells), len(w), mesh.dim)
        cn, _ = _nedelec_tensors(mesh)
        psi = np.einsum("kp,cspd->cksd", lam, cn[cells])
        blocks = np.einsum("ckd,cksd,k->cs", fv, psi, w) * vols[:, None]
        out = np.zeros(mesh.num_edges)
        np.add.at(out, mesh.cell_edges[cells].ravel(), blocks.ravel())
        return out
    if family == "S":
        fv = fv.reshape(len(cells), len(w))
        blocks = np.einsum("ck,kp,k->cp", fv, lam, w) * vols[:, None]
        out = np.zeros(mesh.num_vertices)
        np.add.at(out, mesh.cells[cells].ravel(), blocks.ravel())
        return out
    raise ValueError(f"unsupported load family {family!r}")
