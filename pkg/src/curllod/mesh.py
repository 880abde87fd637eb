"""Structured simplicial meshes on the unit square/cube with nested refinement.

2D squares are split along the diagonal from the lower-left to the upper-right
corner (two triangles per square); 3D cubes use the six-tetrahedra Kuhn split
(all tetrahedra share the main diagonal).  Both patterns are self-similar under
dyadic refinement, so the mesh with 2n cells per side contains the mesh with n
cells per side exactly.

Cell vertex lists are stored sorted by global vertex index; edges are stored as
(min, max) index pairs in lexicographic order, faces as sorted index triples.
"""

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

_LOCAL_EDGES = {
    2: np.array([(0, 1), (0, 2), (1, 2)]),
    3: np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]),
}
_LOCAL_FACES = np.array([(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)])
# Kuhn split: one tetrahedron per axis permutation, tracing a monotone vertex
# path from the cube's origin corner to the opposite corner.
_KUHN_PERMS = list(permutations((0, 1, 2)))
_KUHN_RANK = {p: i for i, p in enumerate(_KUHN_PERMS)}


class Mesh:
    """Simplicial mesh of [0,1]^dim with n subdivisions per axis."""

    def __init__(self, dim, n, vertices, cells, parent=None, cell_parent=None):
        self.dim = dim
        self.n = n
        self.vertices = vertices
        self.cells = cells
        self.parent = parent
        self.cell_parent = cell_parent
        self._build_entities()
        self._cache = {}

    # -- construction ------------------------------------------------------

    def _build_entities(self):
        nv = len(self.vertices)
        pairs = self.cells[:, _LOCAL_EDGES[self.dim]]          # (nc, ne_loc, 2)
        keys = pairs[..., 0].astype(np.int64) * nv + pairs[..., 1]
        edge_keys = np.unique(keys)
        self.edges = np.column_stack([edge_keys // nv, edge_keys % nv])
        self.cell_edges = np.searchsorted(edge_keys, keys)
        if self.dim == 3:
            tris = self.cells[:, _LOCAL_FACES]                 # (nc, 4, 3)
            fkeys = (tris[..., 0].astype(np.int64) * nv + tris[..., 1]) * nv + tris[..., 2]
            face_keys = np.unique(fkeys)
            k = face_keys
            self.faces = np.column_stack([k // (nv * nv), (k // nv) % nv, k % nv])
            self.cell_faces = np.searchsorted(face_keys, fkeys)
            fe = self.faces[:, [(0, 1), (0, 2), (1, 2)]]
            fek = fe[..., 0].astype(np.int64) * nv + fe[..., 1]
            self.face_edges = np.searchsorted(edge_keys, fek)
        else:
            self.faces = None
            self.cell_faces = None
            self.face_edges = None

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_cells(self):
        return len(self.cells)

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def num_faces(self):
        return len(self.faces) if self.faces is not None else 0

    @property
    def key(self):
        return f"{self.dim}d-n{self.n}"

    # -- lazy topology/geometry --------------------------------------------

    def _memo(self, name, fn):
        if name not in self._cache:
            self._cache[name] = fn()
        return self._cache[name]

    @property
    def cell_facets(self):
        """Facet ids per cell: edges in 2D, faces in 3D."""
        return self.cell_edges if self.dim == 2 else self.cell_faces

    @property
    def num_facets(self):
        return self.num_edges if self.dim == 2 else self.num_faces

    @property
    def facet_cell_count(self):
        def build():
            return np.bincount(self.cell_facets.ravel(), minlength=self.num_facets)
        return self._memo("facet_cell_count", build)

    @property
    def boundary_facets(self):
        return self._memo("boundary_facets",
                          lambda: np.flatnonzero(self.facet_cell_count == 1))

    @property
    def boundary_edges(self):
        def build():
            if self.dim == 2:
                return self.boundary_facets
            return np.unique(self.face_edges[self.boundary_facets])
        return self._memo("boundary_edges", build)

    @property
    def boundary_vertices(self):
        def build():
            return np.unique(self.edges[self.boundary_edges])
        return self._memo("boundary_vertices", build)

    @property
    def vertex_cells(self):
        """CSR incidence: row y lists the cells containing vertex y."""
        def build():
            from scipy.sparse import coo_matrix
            nc, k = self.cells.shape
            rows = self.cells.ravel()
            cols = np.repeat(np.arange(nc), k)
            m = coo_matrix((np.ones(len(rows), np.int8), (rows, cols)),
                           shape=(self.num_vertices, nc)).tocsr()
            m.sort_indices()
            return m
        return self._memo("vertex_cells", build)

    def geometry(self):
        """Volumes, barycentric gradients and barycenters, batched per cell."""
        def build():
            pts = self.vertices[self.cells]                    # (nc, d+1, dim)
            m = np.concatenate([np.ones(pts.shape[:2] + (1,)), pts], axis=2)
            coef = np.linalg.inv(m)                            # columns: lambda_i coeffs
            grads = np.swapaxes(coef[:, 1:, :], 1, 2)          # (nc, d+1, dim)
            vols = np.abs(np.linalg.det(m)) / (2.0 if self.dim == 2 else 6.0)
            bary = pts.mean(axis=1)
            return {"vols": vols, "grads": grads, "bary": bary,
                    "dets": np.linalg.det(m)}
        return self._memo("geometry", build)

    # -- point location ------------------------------------------------------

    def locate(self, points):
        """Cell id containing each point (ties on facets resolved deterministically)."""
        points = np.atleast_2d(points)
        scaled = points * self.n
        idx = np.clip(np.floor(scaled).astype(np.int64), 0, self.n - 1)
        frac = scaled - idx
        if self.dim == 2:
            sq = idx[:, 1] * self.n + idx[:, 0]
            upper = frac[:, 1] > frac[:, 0]
            return 2 * sq + upper
        cube = (idx[:, 2] * self.n + idx[:, 1]) * self.n + idx[:, 0]
        order = np.argsort(-frac, axis=1, kind="stable")
        rank = np.array([_KUHN_RANK[tuple(o)] for o in order])
        return 6 * cube + rank

    # -- text dump -----------------------------------------------------------

    def dump_text(self):
        """Plain-text entity listing, index-sorted, for diff-based comparison."""
        out = [f"mesh dim={self.dim} n={self.n}"]
        for i, p in enumerate(self.vertices):
            out.append("vertex %d %s" % (i, " ".join("%.17g" % c for c in p)))
        for i, e in enumerate(self.edges):
            out.append("edge %d %d %d" % (i, e[0], e[1]))
        if self.dim == 3:
            for i, f in enumerate(self.faces):
                out.append("face %d %d %d %d" % (i, f[0], f[1], f[2]))
        for i, c in enumerate(self.cells):
            out.append("cell %d %s" % (i, " ".join(str(v) for v in c)))
        return "\n".join(out) + "\n"


def build_structured_mesh(dim, n):
    """Uniform simplicial mesh of [0,1]^dim with n subdivisions per axis."""
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    side = np.arange(n + 1) / n
    if dim == 2:
        xx, yy = np.meshgrid(side, side, indexing="xy")
        vertices = np.column_stack([xx.ravel(), yy.ravel()])
        ix, iy = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
        v00 = (iy * (n + 1) + ix).ravel()
        v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
        lower = np.column_stack([v00, v10, v11])
        upper = np.column_stack([v00, v01, v11])
        cells = np.empty((2 * n * n, 3), dtype=np.int64)
        cells[0::2] = lower
        cells[1::2] = upper
    else:
        zz, yy, xx = np.meshgrid(side, side, side, indexing="ij")
        vertices = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
        grid = np.arange(n)
        ix = np.tile(grid, n * n)
        iy = np.tile(np.repeat(grid, n), n)
        iz = np.repeat(grid, n * n)
        v0 = (iz * (n + 1) + iy) * (n + 1) + ix
        strides = np.array([1, n + 1, (n + 1) * (n + 1)], dtype=np.int64)
        # cell id = 6*cube + permutation rank, matching locate()
        cells = np.empty((6 * n * n * n, 4), dtype=np.int64)
        for rank, perm in enumerate(_KUHN_PERMS):
            walk = np.cumsum(strides[list(perm)])
            tet = np.column_stack([v0, v0 + walk[0], v0 + walk[1], v0 + walk[2]])
            cells[rank::6] = tet
    cells = np.sort(cells, axis=1)
    return Mesh(dim, n, vertices, cells)


def uniform_refine(mesh):
    """Dyadic refinement; the result carries parent and cell_parent lineage."""
    fine = build_structured_mesh(mesh.dim, 2 * mesh.n)
    fine.parent = mesh
    fine.cell_parent = ancestor_cells(fine, mesh)
    return fine


def ancestor_cells(fine, coarse):
    """Coarse cell containing each fine cell (meshes must be nested)."""
    if fine.dim != coarse.dim or fine.n % coarse.n:
        raise ValueError("meshes are not nested")
    bary = fine.geometry()["bary"]
    return coarse.locate(bary)


@dataclass
class Patch:
    """A set of cells of one mesh, with boundary classification helpers."""

    mesh: Mesh
    cells: np.ndarray
    kind: str
    anchor: int
    m: int | None = None
    _cls: dict = field(default_factory=dict, repr=False)

    def member_edges(self):
        return np.unique(self.mesh.cell_edges[self.cells])

    def member_vertices(self):
        return np.unique(self.mesh.cells[self.cells])

    def member_faces(self):
        if self.mesh.dim != 3:
            raise ValueError("faces exist only in 3D")
        return np.unique(self.mesh.cell_faces[self.cells])

    def boundary_facet_split(self):
        """(on-Gamma, off-Gamma) facet ids of the patch boundary."""
        if "facets" not in self._cls:
            mesh = self.mesh
            count = np.bincount(mesh.cell_facets[self.cells].ravel(),
                                minlength=mesh.num_facets)
            bd = np.flatnonzero(count == 1)
            on_gamma = mesh.facet_cell_count[bd] == 1   # global boundary facets
            self._cls["facets"] = (bd[on_gamma], bd[~on_gamma])
        return self._cls["facets"]

    def edge_split(self):
        """(interior, boundary-on-Gamma, boundary-off-Gamma) member edge ids.

        An edge lying in any off-Gamma boundary facet counts as off-Gamma;
        such dofs carry the patch's zero-trace condition in every variant.
        """
        if "edges" not in self._cls:
            mesh = self.mesh
            member = self.member_edges()
            gamma_f, inner_f = self.boundary_facet_split()
            if mesh.dim == 2:
                gamma_e, inner_e = gamma_f, inner_f
            else:
                gamma_e = np.unique(mesh.face_edges[gamma_f]) if len(gamma_f) else \
                    np.empty(0, np.int64)
                inner_e = np.unique(mesh.face_edges[inner_f]) if len(inner_f) else \
                    np.empty(0, np.int64)
            gamma_e = np.setdiff1d(gamma_e, inner_e)
            interior = np.setdiff1d(member, np.union1d(gamma_e, inner_e))
            self._cls["edges"] = (interior, gamma_e, inner_e)
        return self._cls["edges"]

    def interior_facets(self):
        """Facets shared by exactly two patch cells (zero-normal-trace flux dofs)."""
        mesh = self.mesh
        count = np.bincount(mesh.cell_facets[self.cells].ravel(),
                            minlength=mesh.num_facets)
        return np.flatnonzero(count == 2)


def nodal_patch(mesh, vertex):
    """Cells whose closure contains the given vertex."""
    vc = mesh.vertex_cells
    cells = vc.indices[vc.indptr[vertex]:vc.indptr[vertex + 1]]
    return Patch(mesh, np.sort(cells.astype(np.int64)), "nodal", int(vertex))


def extended_edge_patch(mesh, edge):
    """Union of the nodal patches of the edge's endpoints."""
    a, b = mesh.edges[edge]
    cells = np.union1d(nodal_patch(mesh, a).cells, nodal_patch(mesh, b).cells)
    return Patch(mesh, cells, "edge", int(edge))


def layer_patch(mesh, cell, m):
    """m layers of vertex-adjacent cells around the given cell.

    m=0 is the cell itself; growth saturates early once the patch stops
    changing, so any m at least the mesh diameter yields the full domain.
    """
    cmask = np.zeros(mesh.num_cells, dtype=bool)
    cmask[cell] = True
    vc = mesh.vertex_cells
    for _ in range(m):
        vmask = np.zeros(mesh.num_vertices, dtype=bool)
        vmask[mesh.cells[cmask].ravel()] = True
        before = cmask.sum()
        touched = vc[np.flatnonzero(vmask)].indices
        cmask[touched] = True
        if cmask.sum() == before:
            break
    return Patch(mesh, np.flatnonzero(cmask).astype(np.int64), "layer",
                 int(cell), m)
