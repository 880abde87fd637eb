"""Localized orthogonal decomposition for the curl-curl form.

The fine edge space splits into the coarse space's image under the local
projection and its kernel, the detail space.  Element correctors solve the
weighted form on patch-supported detail functions against minus the element
contribution of an embedded coarse basis function; summed over elements
they yield the global corrector K.  The multiscale space is spanned by
(Embed + K) applied to coarse basis functions, the homogenized system is
its Galerkin restriction of the fine system, and optional element source
correctors remove the load's unresolved fine-scale component near the
boundary (or everywhere).

Both natural and essential boundary conditions are supported: essential
runs restrict the coarse space to interior edges and remove tangential
boundary dofs from every patch problem, so all computed fields carry exact
zero tangential trace.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, csc_matrix, csr_matrix

from .assembly import assemble_B, assemble_load
from .linsolve import (RankDeficiencyError, SaddleSystem, solve_saddle,
                       solve_spd)
from .mesh import Patch, ancestor_cells, layer_patch
from .spaces import SparseOperator, coarse_to_fine


@dataclass
class Forms:
    """Assembled global operators shared by all corrector problems."""

    coarse: object
    fine: object
    mu: object
    kappa: object
    bilinear: SparseOperator          # fine weighted form
    embedding: SparseOperator         # coarse -> fine edge embedding
    children: tuple                   # (order, indptr) fine cells per coarse cell


def build_forms(coarse, fine, mu, kappa):
    anc = ancestor_cells(fine, coarse)
    order = np.argsort(anc, kind="stable")
    counts = np.bincount(anc, minlength=coarse.num_cells)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    return Forms(coarse, fine, mu, kappa,
                 assemble_B(fine, mu, kappa),
                 coarse_to_fine(coarse, fine, "N"),
                 (order, indptr))


def fine_cells_of(forms, coarse_cells):
    order, indptr = forms.children
    return np.sort(np.concatenate(
        [order[indptr[c]:indptr[c + 1]] for c in coarse_cells]))


def fine_patch(forms, coarse_patch):
    """Realize a coarse-cell patch on the fine mesh."""
    return Patch(forms.fine, fine_cells_of(forms, coarse_patch.cells),
                 coarse_patch.kind, coarse_patch.anchor, coarse_patch.m)


def _layers(coarse, cell, m):
    m_eff = coarse.num_cells if math.isinf(m) else int(m)
    return layer_patch(coarse, cell, m_eff)


def detail_constraints(patch, projections, bc_variant):
    """Free fine dofs of a patch and the projection rows constraining them.

    Free dofs are the patch's interior edges; tangential dofs on the part of
    the patch boundary inside the domain are always removed (the detail
    functions vanish outside the patch), while dofs on the domain boundary
    are kept for natural conditions and removed for essential ones.  Returns
    (free dof ids, constraint matrix on those columns, kept coarse rows).
    """
    if bc_variant not in ("natural", "essential"):
        raise ValueError(f"unknown bc variant {bc_variant!r}")
    interior, gamma, _ = patch.edge_split()
    if bc_variant == "natural":
        free = np.sort(np.concatenate([interior, gamma]))
    else:
        free = interior
    if not len(free):
        raise ValueError(f"patch around cell {patch.anchor}: no free dofs")
    rows = csc_matrix(projections.P.mat)[:, free].tocsr()
    keep = np.flatnonzero(np.diff(rows.indptr))
    return free, rows[keep], keep


@dataclass
class CorrectorBasis:
    """Per-cell corrector columns for the local coarse basis functions."""

    coarse: object
    fine: object
    m: float
    bc_variant: str
    columns: dict = field(default_factory=dict)   # cell -> csc (ne_h x nloc)
    patches: dict = field(default_factory=dict)   # cell -> coarse patch cells

    def save(self, path):
        blobs = {}
        for cell, block in self.columns.items():
            c = coo_matrix(block)
            blobs[f"c{cell}"] = np.vstack([c.row, c.col, c.data])
            blobs[f"p{cell}"] = self.patches[cell]
        np.savez_compressed(path, cells=np.array(sorted(self.columns)),
                            **blobs)

    @classmethod
    def load(cls, path, coarse, fine, m, bc_variant):
        data = np.load(path)
        nloc = coarse.cell_edges.shape[1]
        basis = cls(coarse, fine, m, bc_variant)
        for cell in data["cells"]:
            r, c, v = data[f"c{cell}"]
            basis.columns[int(cell)] = csc_matrix(
                (v, (r.astype(np.int64), c.astype(np.int64))),
                shape=(fine.num_edges, nloc))
            basis.patches[int(cell)] = data[f"p{cell}"].astype(np.int64)
        return basis


@dataclass
class SourceCorrectorSet:
    """Per-cell fine-space source corrector vectors."""

    fine: object
    m: float
    bc_variant: str
    selection: str
    vectors: dict = field(default_factory=dict)   # cell -> csc (ne_h x 1)
    patches: dict = field(default_factory=dict)

    def total(self):
        out = np.zeros(self.fine.num_edges)
        for cell in sorted(self.vectors):
            out += self.vectors[cell].toarray().ravel()
        return out

    def save(self, path):
        blobs = {}
        for cell, vec in self.vectors.items():
            c = coo_matrix(vec)
            blobs[f"c{cell}"] = np.vstack([c.row, c.data])
            blobs[f"p{cell}"] = self.patches[cell]
        np.savez_compressed(path, cells=np.array(sorted(self.vectors)),
                            **blobs)

    @classmethod
    def load(cls, path, fine, m, bc_variant, selection):
        data = np.load(path)
        out = cls(fine, m, bc_variant, selection)
        for cell in data["cells"]:
            r, v = data[f"c{cell}"]
            out.vectors[int(cell)] = csc_matrix(
                (v, (r.astype(np.int64), np.zeros(len(r), np.int64))),
                shape=(fine.num_edges, 1))
            out.patches[int(cell)] = data[f"p{cell}"].astype(np.int64)
        return out


def _grouped_patches(coarse, cells, m):
    """Group cells by identical patch cell sets, preserving first-seen order.

    Identical patches (notably the saturated full-domain patch) share one
    factorization; the solve batches their right-hand sides.
    """
    groups = {}
    for cell in cells:
        patch = _layers(coarse, cell, m)
        groups.setdefault(tuple(patch.cells), []).append((cell, patch))
    return groups


def _corrector_solves(forms, projections, m, bc_variant, cells, loads=None):
    """Solve all element (and optional source) corrector problems.

    Returns (element columns per cell, source vectors per cell, patch cells
    per cell).  loads maps a cell to its fine load vector restricted to the
    element; cells without an entry get no source solve.
    """
    coarse, fine = forms.coarse, forms.fine
    bmat = csr_matrix(forms.bilinear.mat)
    emb = csc_matrix(forms.embedding.mat)
    nloc = coarse.cell_edges.shape[1]
    columns, sources, patches = {}, {}, {}
    for sig, group in _grouped_patches(coarse, cells, m).items():
        fp = fine_patch(forms, group[0][1])
        free, constraints, _ = detail_constraints(fp, projections, bc_variant)
        system_a = bmat[np.ix_(free, free)]
        rhs, spans = [], []
        for cell, _ in group:
            element = assemble_B(fine, forms.mu, forms.kappa,
                                 cells=fine_cells_of(forms, [cell])).mat
            block = -(element @ emb[:, coarse.cell_edges[cell]]).toarray()
            cols = [block[free]]
            if loads is not None and cell in loads:
                cols.append(loads[cell][free, None])
            rhs.append(np.hstack(cols))
            spans.append(cols[0].shape[1] + (len(cols) - 1))
        rhs = np.hstack(rhs)
        # Restricting projection rows to a truncated patch can make some of
        # them linear combinations of others; with zero constraint data the
        # feasible set is unchanged when those named rows are dropped.
        for _ in range(3):
            try:
                sol, _ = solve_saddle(
                    SaddleSystem(system_a, constraints, rhs), rtol=1e-9,
                    label=f"corrector patch around cell {group[0][0]}")
                break
            except RankDeficiencyError as err:
                keep = np.setdiff1d(np.arange(constraints.shape[0]), err.rows)
                constraints = constraints[keep]
        else:
            raise RankDeficiencyError(
                f"corrector patch around cell {group[0][0]}: constraints "
                "remain rank deficient after pruning")
        sol = np.atleast_2d(sol.T).T
        offset = 0
        for (cell, patch), span in zip(group, spans):
            block = sol[:, offset:offset + nloc]
            nz = np.nonzero(block)
            columns[cell] = csc_matrix(
                (block[nz], (free[nz[0]], nz[1])),
                shape=(fine.num_edges, nloc))
            patches[cell] = patch.cells
            if span > nloc:
                vec = sol[:, offset + nloc]
                nzv = np.flatnonzero(vec)
                sources[cell] = csc_matrix(
                    (vec[nzv], (free[nzv], np.zeros(len(nzv), np.int64))),
                    shape=(fine.num_edges, 1))
            offset += span
    return columns, sources, patches


def element_corrector_basis(cell, m, forms, projections, bc_variant):
    """Corrector columns of one coarse cell (one per local coarse edge)."""
    columns, _, patches = _corrector_solves(
        forms, projections, m, bc_variant, [cell])
    basis = CorrectorBasis(forms.coarse, forms.fine, m, bc_variant)
    basis.columns[cell] = columns[cell]
    basis.patches[cell] = patches[cell]
    return basis


def build_corrector_basis(forms, projections, m, bc_variant):
    """Corrector columns for every coarse cell."""
    cells = range(forms.coarse.num_cells)
    columns, _, patches = _corrector_solves(
        forms, projections, m, bc_variant, cells)
    return CorrectorBasis(forms.coarse, forms.fine, m, bc_variant,
                          columns, patches)


def assemble_global_corrector(basis):
    """Sum per-cell corrector columns into the coarse-to-fine corrector K."""
    coarse, fine = basis.coarse, basis.fine
    missing = [c for c in range(coarse.num_cells) if c not in basis.columns]
    if missing:
        raise ValueError(f"corrector basis missing cells {missing[:8]}")
    rows, cols, vals = [], [], []
    for cell in range(coarse.num_cells):
        block = coo_matrix(basis.columns[cell])
        rows.append(block.row)
        cols.append(coarse.cell_edges[cell][block.col])
        vals.append(block.data)
    mat = csc_matrix(coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(fine.num_edges, coarse.num_edges)))
    return SparseOperator(mat, f"N/{fine.key}", f"N/{coarse.key}")


def source_correctors(f, m, selection, forms, projections, bc_variant):
    """Element source correctors for the selected coarse cells.

    selection: 'none' (empty set), 'boundary' (cells with a vertex on the
    domain boundary), or 'all'.
    """
    if selection not in ("none", "boundary", "all"):
        raise ValueError(f"unknown source-correction mode {selection!r}")
    coarse, fine = forms.coarse, forms.fine
    out = SourceCorrectorSet(fine, m, bc_variant, selection)
    if selection == "none":
        return out
    gamma_verts = np.zeros(coarse.num_vertices, bool)
    gamma_verts[coarse.boundary_vertices] = True
    cells, loads = [], {}
    for cell in range(coarse.num_cells):
        if selection == "boundary" and not gamma_verts[coarse.cells[cell]].any():
            continue
        load = assemble_load(fine, f, family="N",
                             cells=fine_cells_of(forms, [cell]))
        if np.any(load):
            cells.append(cell)
            loads[cell] = load
    if not cells:
        return out
    _, sources, patches = _corrector_solves(
        forms, projections, m, bc_variant, cells, loads=loads)
    out.vectors = sources
    out.patches = {c: patches[c] for c in sources}
    return out


@dataclass
class LodConfig:
    coarse: object
    fine: object
    mu: object
    kappa: object
    f: object
    m: float
    projections: object
    bc_variant: str = "natural"
    source_correction: str = "none"
    cache_dir: str = None


@dataclass
class MultiscaleSolution:
    config: LodConfig
    coarse_edge_ids: np.ndarray      # trial edges (all, or interior for essential)
    u_H: np.ndarray                  # coefficients on those edges
    corrector: SparseOperator        # global K
    source_total: np.ndarray         # summed source correctors
    reconstruction: np.ndarray
    coarse_matrix: object            # homogenized system (trial x trial)


def _coefficient_tag(value):
    if np.isscalar(value):
        return repr(value)
    cb = getattr(value, "block_count", None)
    if cb is not None:
        return f"cb{cb}-{value.value_even!r}-{value.value_odd!r}"
    return getattr(value, "__name__", "callable")


def _cache_key(config):
    return "_".join([
        config.coarse.key.replace("/", "-"), config.fine.key.replace("/", "-"),
        f"m{config.m}", config.bc_variant, config.projections.variant,
        _coefficient_tag(config.mu), _coefficient_tag(config.kappa)])


def solve_lod(config):
    """Assemble and solve the homogenized coarse system; store the
    fine-space reconstruction (I + K) u_H plus any source correctors."""
    coarse, fine = config.coarse, config.fine
    forms = build_forms(coarse, fine, config.mu, config.kappa)
    basis = None
    if config.cache_dir:
        os.makedirs(config.cache_dir, exist_ok=True)
        path = os.path.join(config.cache_dir,
                            f"correctors_{_cache_key(config)}.npz")
        if os.path.exists(path):
            basis = CorrectorBasis.load(path, coarse, fine, config.m,
                                        config.bc_variant)
    if basis is None:
        basis = build_corrector_basis(forms, config.projections, config.m,
                                      config.bc_variant)
        if config.cache_dir:
            basis.save(path)
    corrector = assemble_global_corrector(basis)
    srcs = source_correctors(config.f, config.m, config.source_correction,
                             forms, config.projections, config.bc_variant)
    source_total = srcs.total()

    if config.bc_variant == "essential":
        trial_edges = np.setdiff1d(np.arange(coarse.num_edges),
                                   coarse.boundary_edges)
    else:
        trial_edges = np.arange(coarse.num_edges)
    trial = (forms.embedding.mat + corrector.mat).tocsc()[:, trial_edges]
    bmat = forms.bilinear.mat
    coarse_matrix = csr_matrix(trial.T @ bmat @ trial)
    load = assemble_load(fine, config.f, family="N")
    rhs = trial.T @ (load - bmat @ source_total)
    u_H = solve_spd(coarse_matrix, rhs, rtol=1e-10,
                    label="homogenized coarse system")
    reconstruction = trial @ u_H + source_total
    return MultiscaleSolution(config, trial_edges, u_H, corrector,
                              source_total, reconstruction, coarse_matrix)


def reconstruct(sol):
    """Recompute the fine vector from the stored pieces (exact combination)."""
    trial = (coarse_to_fine(sol.config.coarse, sol.config.fine, "N").mat
             + sol.corrector.mat).tocsc()[:, sol.coarse_edge_ids]
    return trial @ sol.u_H + sol.source_total
