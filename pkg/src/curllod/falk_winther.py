"""Falk-Winther interpolation onto the coarse edge space, assembled row by row.

The operator maps the fine Nedelec space onto the coarse one and is built
from three locally computable stages, looping over coarse entities:

1. a flux-averaging stage: each coarse edge row integrates the input against
   a zero-normal-trace patch flux whose divergence balances the difference
   of the endpoint vertex-star indicators;
2. a vertex-potential stage: local zero-mean Neumann potentials fitted on
   vertex stars, attached to rows through the coarse gradient incidence,
   which makes the combined stage commute with the nodal interpolation;
3. a per-edge correction from a coarse quasi-interpolation (curl-fitting
   with gradient constraints) that restores invariance on the coarse space.

All stages only involve the extended edge patch (the union of the two
endpoint vertex stars) or single vertex stars, so every row of the result
is local.  The companion vertex operator is returned for validating the
commuting identity with the gradient incidence matrices.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, csc_matrix, csr_matrix

from .assembly import assemble_coupling
from .linsolve import SolverError
from .mesh import ancestor_cells, extended_edge_patch, nodal_patch
from .spaces import (SparseOperator, coarse_to_fine, curl_incidence,
                     divergence_incidence, gradient_incidence)


@dataclass
class ProjectionSet:
    """Projection matrices between one fine/coarse mesh pair.

    P maps fine edge dofs to coarse edge dofs, PV fine vertex dofs to coarse
    vertex dofs, and S1 is the intermediate commuting stage of P.  liftings
    holds the per-edge patch flux coefficient vectors (columns, in the coarse
    facet space); corrections is the per-edge quasi-interpolation part P - S1.
    """

    coarse: object
    fine: object
    P: SparseOperator
    PV: SparseOperator
    S1: SparseOperator
    liftings: object
    corrections: object
    variant: str = "standard"


def _workspace(coarse, fine):
    tag = ("projection-workspace", coarse.key)
    if tag in fine._cache:
        return fine._cache[tag]
    anc = ancestor_cells(fine, coarse)
    order = np.argsort(anc, kind="stable")
    counts = np.bincount(anc, minlength=coarse.num_cells)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    emb_s = coarse_to_fine(coarse, fine, "S")
    ws = {
        "coarse": coarse, "fine": fine,
        "children": (order, indptr),
        "emb_n": coarse_to_fine(coarse, fine, "N"),
        "emb_s": emb_s,
        "grad_h": gradient_incidence(fine),
        "grad_H": gradient_incidence(coarse),
        "grad_embed": csc_matrix((gradient_incidence(fine) @ emb_s).mat),
        "cvols": coarse.geometry()["vols"],
    }
    ws["emb_n_csc"] = csc_matrix(ws["emb_n"].mat)
    ws["emb_s_csc"] = csc_matrix(emb_s.mat)
    if coarse.dim == 3:
        ws["emb_rt"] = coarse_to_fine(coarse, fine, "RT")
    fine._cache[tag] = ws
    return ws


def _fine_cells(ws, coarse_cells):
    order, indptr = ws["children"]
    return np.sort(np.concatenate(
        [order[indptr[c]:indptr[c + 1]] for c in coarse_cells]))


def _dense_solve(kkt, rhs, label):
    sol = np.linalg.solve(kkt, rhs)
    resid = np.abs(kkt @ sol - rhs).max()
    scale = max(np.abs(rhs).max(), 1e-30)
    if resid > 1e-10 * scale:
        raise SolverError(f"{label}: local residual {resid / scale:.2e}")
    return sol


# -- stage 1: patch fluxes and the averaging rows ------------------------------

def vertex_indicator(coarse, vertex):
    """Normalized indicator of the vertex star, one value per coarse cell."""
    patch = nodal_patch(coarse, vertex)
    out = np.zeros(coarse.num_cells)
    out[patch.cells] = 1.0 / coarse.geometry()["vols"][patch.cells].sum()
    return out


def edge_flux_lifting(coarse, edge):
    """Zero-normal-trace patch flux balancing the endpoint indicators.

    Solves, on the extended edge patch, for the minimum-norm coarse flux
    field whose cellwise divergence equals minus the difference of the two
    endpoint vertex indicators (head minus tail).  Minimizing the norm under
    the divergence constraint also makes the field orthogonal to the curls
    of zero-trace patch fields, because the divergence incidence annihilates
    the curl incidence.  In 2D the flux space is the 90-degree rotation of
    the zero-tangential-trace edge space, so coefficients live on edges.

    Returns (coefficients in the full coarse facet space, patch).
    """
    patch = extended_edge_patch(coarse, edge)
    inner = patch.interior_facets()
    if not len(inner):
        raise SolverError(f"edge {edge}: patch has no interior facets")
    tail, head = coarse.edges[edge]
    rhs_field = vertex_indicator(coarse, tail) - vertex_indicator(coarse, head)
    if coarse.dim == 3:
        mass = assemble_coupling(coarse, "mass-flux", cells=patch.cells).mat
        inc = divergence_incidence(coarse).mat
    else:
        mass = assemble_coupling(coarse, "mass-edge", cells=patch.cells).mat
        inc = curl_incidence(coarse).mat
    A = inc[np.ix_(patch.cells, inner)].toarray()
    b = rhs_field[patch.cells]
    n, m = len(inner), len(patch.cells) - 1   # one redundant zero-mean row
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = mass[np.ix_(inner, inner)].toarray()
    kkt[:n, n:] = A[:-1].T
    kkt[n:, :n] = A[:-1]
    sol = _dense_solve(kkt, np.concatenate([np.zeros(n), b[:-1]]),
                       f"flux lifting, edge {edge}")
    z = sol[:n]
    resid = np.abs(A @ z - b).max()
    if resid > 1e-10 * np.abs(b).max():
        raise SolverError(
            f"edge {edge}: divergence residual {resid / np.abs(b).max():.2e}")
    out = np.zeros(coarse.num_facets)
    out[inner] = z
    return out, patch


def assemble_flux_averaging(coarse, fine):
    """Averaging rows of the projection: row E integrates the fine field
    against the patch flux of coarse edge E.  Returns (operator, liftings)
    with the lifting coefficient vectors as columns of a sparse matrix."""
    ws = _workspace(coarse, fine)
    rows, cols, vals = [], [], []
    for e in range(coarse.num_edges):
        z, _ = edge_flux_lifting(coarse, e)
        nz = np.flatnonzero(z)
        rows.append(nz)
        cols.append(np.full(len(nz), e))
        vals.append(z[nz])
    liftings = csc_matrix(
        coo_matrix((np.concatenate(vals),
                    (np.concatenate(rows), np.concatenate(cols))),
                   shape=(coarse.num_facets, coarse.num_edges)))
    if coarse.dim == 3:
        mix = assemble_coupling(fine, "mass-flux-edge").mat
        mat = liftings.T @ ws["emb_rt"].mat.T @ mix
    else:
        mix = assemble_coupling(fine, "rot-edge").mat
        mat = liftings.T @ ws["emb_n"].mat.T @ mix
    op = SparseOperator(mat, f"N/{coarse.key}", f"N/{fine.key}")
    return op, liftings


# -- stage 2: vertex potentials ------------------------------------------------

def _vertex_system(coarse, patch, pv):
    A = assemble_coupling(coarse, "grad-grad", cells=patch.cells).mat
    A = A[np.ix_(pv, pv)].toarray()
    mean = assemble_coupling(coarse, "mean", cells=patch.cells)[pv]
    k = len(pv)
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = A
    kkt[:k, k] = mean
    kkt[k, :k] = mean
    return kkt, mean


def vertex_potential_block(coarse, fine, vertex):
    """Dense block of the local zero-mean potential fit on one vertex star.

    Maps fine edge data to the potential's values at the patch's coarse
    vertices: the potential's coarse gradient matches the data weakly on the
    star, and its patch mean is zero.  Returns (block, patch vertex ids,
    fine edge ids).
    """
    ws = _workspace(coarse, fine)
    patch = nodal_patch(coarse, vertex)
    pv = patch.member_vertices()
    kkt, _ = _vertex_system(coarse, patch, pv)
    fc = _fine_cells(ws, patch.cells)
    fe = np.unique(fine.cell_edges[fc])
    mass = assemble_coupling(fine, "mass-edge", cells=fc).mat
    B = (ws["grad_embed"][:, pv].T @ mass)[:, fe].toarray()
    rhs = np.vstack([B, np.zeros((1, B.shape[1]))])
    sol = _dense_solve(kkt, rhs, f"potential block, vertex {vertex}")
    return sol[:len(pv)], pv, fe


def _vertex_stage(ws):
    """Row data for all vertex stars: potential value at the star's own
    vertex as a functional of fine edge dofs (for the edge rows), and the
    vertex-projection rows (averaging plus potential) on fine vertex dofs."""
    coarse, fine = ws["coarse"], ws["fine"]
    pr, pc_, pv_ = [], [], []
    vr, vc_, vv_ = [], [], []
    for y in range(coarse.num_vertices):
        patch = nodal_patch(coarse, y)
        pv = patch.member_vertices()
        kkt, _ = _vertex_system(coarse, patch, pv)
        unit = np.zeros(len(pv) + 1)
        unit[np.searchsorted(pv, y)] = 1.0
        w = _dense_solve(kkt, unit, f"potential row, vertex {y}")[:len(pv)]
        fc = _fine_cells(ws, patch.cells)
        mass = assemble_coupling(fine, "mass-edge", cells=fc).mat
        row = mass.T @ (ws["grad_embed"][:, pv] @ w)
        nz = np.flatnonzero(row)
        pr.append(np.full(len(nz), y))
        pc_.append(nz)
        pv_.append(row[nz])
        stiff = assemble_coupling(fine, "grad-grad", cells=fc).mat
        vrow = stiff.T @ (ws["emb_s_csc"][:, pv] @ w)
        vrow += assemble_coupling(fine, "mean", cells=fc) / \
            ws["cvols"][patch.cells].sum()
        nz = np.flatnonzero(vrow)
        vr.append(np.full(len(nz), y))
        vc_.append(nz)
        vv_.append(vrow[nz])
    shape_p = (coarse.num_vertices, fine.num_edges)
    shape_v = (coarse.num_vertices, fine.num_vertices)
    potential_rows = csr_matrix(coo_matrix(
        (np.concatenate(pv_), (np.concatenate(pr), np.concatenate(pc_))),
        shape=shape_p))
    pv_mat = csr_matrix(coo_matrix(
        (np.concatenate(vv_), (np.concatenate(vr), np.concatenate(vc_))),
        shape=shape_v))
    return potential_rows, SparseOperator(pv_mat, f"S/{coarse.key}",
                                          f"S/{fine.key}")


def assemble_commuting_stage(coarse, fine):
    """The averaging-plus-potential stage and the vertex projection.

    Row E is the averaging row plus the difference of the endpoint potential
    values (head minus tail), which is exactly the coarse gradient incidence
    applied to the stacked potential rows.  Returns (stage, vertex
    projection, liftings).
    """
    ws = _workspace(coarse, fine)
    averaging, liftings = assemble_flux_averaging(coarse, fine)
    potential_rows, pv_op = _vertex_stage(ws)
    mat = averaging.mat + ws["grad_H"].mat @ potential_rows
    s1 = SparseOperator(mat, f"N/{coarse.key}", f"N/{fine.key}")
    return s1, pv_op, liftings


# -- stage 3: per-edge correction ----------------------------------------------

def _edge_system(coarse, patch, pe, pvs):
    A = assemble_coupling(coarse, "curl-curl", cells=patch.cells).mat
    A = A[np.ix_(pe, pe)].toarray()
    Bv = assemble_coupling(coarse, "edge-grad", cells=patch.cells).mat
    Bv = Bv[np.ix_(pe, pvs)].toarray()
    ne_p, nv_p = Bv.shape
    # gradients of the patch hats sum to zero: drop one constraint
    kkt = np.zeros((ne_p + nv_p - 1, ne_p + nv_p - 1))
    kkt[:ne_p, :ne_p] = A
    kkt[:ne_p, ne_p:] = Bv[:, :-1]
    kkt[ne_p:, :ne_p] = Bv[:, :-1].T
    return kkt


def edge_quasi_interpolation_block(coarse, fine, edge):
    """Dense block of the local coarse quasi-interpolation on one edge patch.

    Maps fine edge data restricted to the extended edge patch to coarse
    patch edge dofs: the image matches the data's curl weakly against coarse
    curls and its moments against coarse hat gradients.  Returns (block,
    patch coarse edge ids, fine edge ids).
    """
    ws = _workspace(coarse, fine)
    patch = extended_edge_patch(coarse, edge)
    pe = patch.member_edges()
    pvs = patch.member_vertices()
    kkt = _edge_system(coarse, patch, pe, pvs)
    fc = _fine_cells(ws, patch.cells)
    fe = np.unique(fine.cell_edges[fc])
    curl_h = assemble_coupling(fine, "curl-curl", cells=fc).mat
    mass_h = assemble_coupling(fine, "mass-edge", cells=fc).mat
    C = (ws["emb_n_csc"][:, pe].T @ curl_h)[:, fe].toarray()
    D = (ws["grad_embed"][:, pvs].T @ mass_h)[:, fe].toarray()
    rhs = np.vstack([C, D[:-1]])
    sol = _dense_solve(kkt, rhs, f"quasi-interpolation block, edge {edge}")
    return sol[:len(pe)], pe, fe


def build_projection(coarse, fine):
    """Assemble the full projection set for a nested mesh pair.

    The correction row for coarse edge E applies the identity-minus-stage
    functional to the local quasi-interpolation; by symmetry of the local
    saddle matrix this costs a single dense solve per edge.
    """
    ws = _workspace(coarse, fine)
    s1, pv_op, liftings = assemble_commuting_stage(coarse, fine)
    stage_on_coarse = csr_matrix((s1 @ ws["emb_n"]).mat)
    rows, cols, vals = [], [], []
    for e in range(coarse.num_edges):
        patch = extended_edge_patch(coarse, e)
        pe = patch.member_edges()
        pvs = patch.member_vertices()
        kkt = _edge_system(coarse, patch, pe, pvs)
        x = -stage_on_coarse[e, pe].toarray().ravel()
        x[np.searchsorted(pe, e)] += 1.0
        rhs = np.concatenate([x, np.zeros(len(pvs) - 1)])
        sol = _dense_solve(kkt, rhs, f"correction row, edge {e}")
        ye, yv = sol[:len(pe)], sol[len(pe):]
        fc = _fine_cells(ws, patch.cells)
        curl_h = assemble_coupling(fine, "curl-curl", cells=fc).mat
        mass_h = assemble_coupling(fine, "mass-edge", cells=fc).mat
        row = curl_h.T @ (ws["emb_n_csc"][:, pe] @ ye)
        row += mass_h.T @ (ws["grad_embed"][:, pvs[:-1]] @ yv)
        nz = np.flatnonzero(row)
        rows.append(np.full(len(nz), e))
        cols.append(nz)
        vals.append(row[nz])
    corrections = csr_matrix(coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(coarse.num_edges, fine.num_edges)))
    p = SparseOperator(s1.mat + corrections, f"N/{coarse.key}",
                       f"N/{fine.key}")
    return ProjectionSet(coarse, fine, p, pv_op, s1, liftings, corrections)


def zero_boundary_rows(ps):
    """Variant with the rows of all boundary coarse edges set to zero.

    The result maps into the zero-tangential-trace coarse space; interior
    rows are carried over bit-exactly.
    """
    mat = csr_matrix(ps.P.mat, copy=True)
    for e in ps.coarse.boundary_edges:
        mat.data[mat.indptr[e]:mat.indptr[e + 1]] = 0.0
    mat.eliminate_zeros()
    p = SparseOperator(mat, ps.P.row_space, ps.P.col_space)
    return ProjectionSet(ps.coarse, ps.fine, p, ps.PV, ps.S1, ps.liftings,
                         ps.corrections, variant="boundary_zeroed")


def dump_triplets(op):
    """Sparse operator as sorted 'row col value' text, 17 significant digits."""
    coo = coo_matrix(op.mat)
    order = np.lexsort((coo.col, coo.row))
    lines = ["%d %d %d" % (op.shape[0], op.shape[1], coo.nnz)]
    for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
        lines.append("%d %d %.17g" % (r, c, v))
    return "\n".join(lines) + "\n"
