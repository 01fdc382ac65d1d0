"""Staggered-grid index spaces, discrete operators, and Poisson assembly.

The primal grid places potentials on nodes, line-integrated quantities on
edges, and fluxes on faces.  All index spaces are linear, x-fastest, with
orientation blocks in x, y, z order:

* node (i, j, k)            -> ``i + (nx+1)*(j + (ny+1)*k)``
* x-edge (i, j, k)          -> block 0, dims ``(nx, ny+1, nz+1)``
* y-edge, z-edge            -> blocks 1, 2, analogous
* x-face (normal +x)        -> block 0, dims ``(nx+1, ny, nz)``
* y-face, z-face            -> blocks 1, 2, analogous
* cell (i, j, k)            -> ``i + nx*(j + ny*k)``

The incidence matrices built here are purely topological (+-1 entries) and
satisfy curl . grad = 0 and div . curl = 0 exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.io import mmread, mmwrite
from scipy.sparse import coo_matrix, csr_matrix, diags

from .errors import EmptySystemError
from .voxel_model import VoxelModel, conductive_component_labels


@dataclass(frozen=True)
class StaggeredGrid:
    """Node/edge/face/cell index structure over a voxel box."""

    dims: tuple
    spacing: tuple
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(dims) != 3 or any(n < 0 for n in dims):
            raise ValueError(f"dims must be three integers >= 0, got {dims}")
        if len(spacing) != 3 or any(not s > 0.0 for s in spacing):
            raise ValueError(f"spacing must be positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def from_model(cls, model: VoxelModel) -> "StaggeredGrid":
        return cls(model.dims, model.spacing, model.origin)

    # -- counts ------------------------------------------------------------

    @property
    def node_dims(self):
        nx, ny, nz = self.dims
        return (nx + 1, ny + 1, nz + 1)

    @property
    def n_nodes(self) -> int:
        a, b, c = self.node_dims
        return a * b * c

    def edge_dims(self, axis: int):
        d = list(self.node_dims)
        d[axis] = self.dims[axis]
        return tuple(d)

    def face_dims(self, axis: int):
        d = list(self.dims)
        d[axis] = self.dims[axis] + 1
        return tuple(d)

    @cached_property
    def edge_counts(self):
        return tuple(int(np.prod(self.edge_dims(a))) for a in range(3))

    @cached_property
    def face_counts(self):
        return tuple(int(np.prod(self.face_dims(a))) for a in range(3))

    @property
    def n_edges(self) -> int:
        return sum(self.edge_counts)

    @property
    def n_faces(self) -> int:
        return sum(self.face_counts)

    @property
    def n_cells(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @cached_property
    def edge_offsets(self):
        ex, ey, _ = self.edge_counts
        return (0, ex, ex + ey)

    @cached_property
    def face_offsets(self):
        fx, fy, _ = self.face_counts
        return (0, fx, fx + fy)

    # -- index maps ----------------------------------------------------------

    def node_index(self, i, j, k):
        nx1, ny1, _ = self.node_dims
        return i + nx1 * (j + ny1 * np.asarray(k))

    def edge_index(self, axis: int, i, j, k):
        d = self.edge_dims(axis)
        return self.edge_offsets[axis] + i + d[0] * (j + d[1] * np.asarray(k))

    def face_index(self, axis: int, i, j, k):
        d = self.face_dims(axis)
        return self.face_offsets[axis] + i + d[0] * (j + d[1] * np.asarray(k))

    def cell_index(self, i, j, k):
        nx, ny, _ = self.dims
        return i + nx * (j + ny * np.asarray(k))

    # -- block views ---------------------------------------------------------

    def edge_blocks(self, vec: np.ndarray):
        """Split a length-n_edges vector into three 3-d per-orientation views."""
        out = []
        for a in range(3):
            lo = self.edge_offsets[a]
            out.append(vec[lo:lo + self.edge_counts[a]].reshape(self.edge_dims(a), order="F"))
        return tuple(out)

    def face_blocks(self, vec: np.ndarray):
        out = []
        for a in range(3):
            lo = self.face_offsets[a]
            out.append(vec[lo:lo + self.face_counts[a]].reshape(self.face_dims(a), order="F"))
        return tuple(out)

    def merge_face_blocks(self, blocks) -> np.ndarray:
        return np.concatenate([b.ravel(order="F") for b in blocks])

    def merge_edge_blocks(self, blocks) -> np.ndarray:
        return np.concatenate([b.ravel(order="F") for b in blocks])

    # -- geometry --------------------------------------------------------------

    def face_area(self, axis: int) -> float:
        s = self.spacing
        t = [a for a in range(3) if a != axis]
        return s[t[0]] * s[t[1]]

    def face_center_axes(self, axis: int):
        """Per-axis 1-d center coordinates of the faces with the given normal."""
        d = self.face_dims(axis)
        coords = []
        for a in range(3):
            if a == axis:
                coords.append(self.origin[a] + np.arange(d[a]) * self.spacing[a])
            else:
                coords.append(self.origin[a] + (np.arange(d[a]) + 0.5) * self.spacing[a])
        return tuple(coords)

    @cached_property
    def edge_endpoints(self):
        """(tails, heads) node indices for every edge, in canonical edge order."""
        tails = []
        heads = []
        for axis in range(3):
            d = self.edge_dims(axis)
            i, j, k = np.meshgrid(
                np.arange(d[0]), np.arange(d[1]), np.arange(d[2]), indexing="ij"
            )
            i, j, k = i.ravel(order="F"), j.ravel(order="F"), k.ravel(order="F")
            t = self.node_index(i, j, k)
            step = [i, j, k]
            step[axis] = step[axis] + 1
            h = self.node_index(*step)
            tails.append(t)
            heads.append(h)
        return np.concatenate(tails), np.concatenate(heads)

    @cached_property
    def face_edge_incidence(self):
        """(edges, signs): for each face its 4 boundary edges with orientation.

        ``edges`` is ``(n_faces, 4)`` int64, ``signs`` ``(n_faces, 4)`` int8.
        The circulation sign convention is right-handed around the +axis
        normal: for a face with normal d and transverse axes (e1, e2) in
        cyclic order, the boundary is  +e1(base) +e2(base+e1) -e1(base+e2)
        -e2(base).
        """
        all_edges = []
        all_signs = []
        for axis in range(3):
            e1 = (axis + 1) % 3
            e2 = (axis + 2) % 3
            d = self.face_dims(axis)
            i, j, k = np.meshgrid(
                np.arange(d[0]), np.arange(d[1]), np.arange(d[2]), indexing="ij"
            )
            base = [i.ravel(order="F"), j.ravel(order="F"), k.ravel(order="F")]

            def shifted(b, ax):
                s = [c.copy() for c in b]
                s[ax] = s[ax] + 1
                return s

            cols = np.stack(
                [
                    self.edge_index(e1, *base),
                    self.edge_index(e2, *shifted(base, e1)),
                    self.edge_index(e1, *shifted(base, e2)),
                    self.edge_index(e2, *base),
                ],
                axis=1,
            )
            all_edges.append(cols)
            sg = np.tile(np.array([1, 1, -1, -1], dtype=np.int8), (cols.shape[0], 1))
            all_signs.append(sg)
        return np.concatenate(all_edges), np.concatenate(all_signs)

    @cached_property
    def cell_face_incidence(self):
        """(faces, signs): for each cell its 6 faces, outward-positive."""
        nx, ny, nz = self.dims
        i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        i, j, k = i.ravel(order="F"), j.ravel(order="F"), k.ravel(order="F")
        faces = np.stack(
            [
                self.face_index(0, i + 1, j, k),
                self.face_index(0, i, j, k),
                self.face_index(1, i, j + 1, k),
                self.face_index(1, i, j, k),
                self.face_index(2, i, j, k + 1),
                self.face_index(2, i, j, k),
            ],
            axis=1,
        )
        signs = np.tile(np.array([1, -1, 1, -1, 1, -1], dtype=np.int8), (faces.shape[0], 1))
        return faces, signs


# ---------------------------------------------------------------------------
# Operator builders
# ---------------------------------------------------------------------------

def build_gradient(grid: StaggeredGrid) -> csr_matrix:
    """Topological gradient: one row per edge with -1 on tail, +1 on head."""
    tails, heads = grid.edge_endpoints
    ne = grid.n_edges
    rows = np.repeat(np.arange(ne, dtype=np.int64), 2)
    cols = np.stack([tails, heads], axis=1).ravel()
    vals = np.tile(np.array([-1.0, 1.0]), ne)
    m = coo_matrix((vals, (rows, cols)), shape=(ne, grid.n_nodes)).tocsr()
    m.sort_indices()
    return m


def build_curl(grid: StaggeredGrid) -> csr_matrix:
    """Face circulation operator: one row per face with four +-1 entries."""
    edges, signs = grid.face_edge_incidence
    nf = grid.n_faces
    rows = np.repeat(np.arange(nf, dtype=np.int64), 4)
    m = coo_matrix(
        (signs.ravel().astype(np.float64), (rows, edges.ravel())),
        shape=(nf, grid.n_edges),
    ).tocsr()
    m.sort_indices()
    return m


def build_divergence(grid: StaggeredGrid) -> csr_matrix:
    """Cell net-outflux operator: one row per voxel with six +-1 entries."""
    faces, signs = grid.cell_face_incidence
    nc = grid.n_cells
    rows = np.repeat(np.arange(nc, dtype=np.int64), 6)
    m = coo_matrix(
        (signs.ravel().astype(np.float64), (rows, faces.ravel())),
        shape=(nc, grid.n_faces),
    ).tocsr()
    m.sort_indices()
    return m


def _mean4(kappa: np.ndarray, axis: int) -> np.ndarray:
    """Mean conductivity over the <=4 voxels around each edge of one orientation.

    Voxels missing at the grid boundary count as zero; the denominator stays 4.
    """
    pads = [(0, 0)] * 3
    for a in range(3):
        if a != axis:
            pads[a] = (1, 1)
    p = np.pad(kappa, pads)
    t = [a for a in range(3) if a != axis]
    acc = None
    for da in (0, 1):
        for db in (0, 1):
            sl = [slice(None)] * 3
            sl[t[0]] = slice(da, p.shape[t[0]] - 1 + da)
            sl[t[1]] = slice(db, p.shape[t[1]] - 1 + db)
            piece = p[tuple(sl)]
            acc = piece.copy() if acc is None else acc + piece
    return acc * 0.25


def edge_conductance(model: VoxelModel, grid: StaggeredGrid, frequency_hz: float) -> np.ndarray:
    """Diagonal of the edge conductivity matrix (siemens), length n_edges.

    Entry for edge e is ``mean_kappa * dual_area / edge_length`` where the
    mean runs over the four voxels sharing the edge (absent ones as zero).
    """
    kappa = model.voxel_kappa(frequency_hz)
    out = np.empty(grid.n_edges, dtype=np.float64)
    for axis in range(3):
        geom = grid.face_area(axis) / grid.spacing[axis]
        lo = grid.edge_offsets[axis]
        block = _mean4(kappa, axis) * geom
        out[lo:lo + grid.edge_counts[axis]] = block.ravel(order="F")
    return out


def build_mkappa(model: VoxelModel, grid: StaggeredGrid, frequency_hz: float) -> csr_matrix:
    """Edge conductivity matrix as a diagonal sparse matrix."""
    return diags(edge_conductance(model, grid, frequency_hz), format="csr")


# ---------------------------------------------------------------------------
# Poisson system
# ---------------------------------------------------------------------------

@dataclass
class PoissonSystem:
    """Reduced SPD system  A psi = rhs  on free conductive nodes.

    ``node_to_dof`` maps grid node index -> reduced index (-1 for excluded or
    pinned nodes); ``dof_to_node`` is its inverse on the free set.  One node
    per conductive component (the lowest linear index) is pinned to zero.
    """

    matrix: csr_matrix
    rhs: np.ndarray
    node_to_dof: np.ndarray
    dof_to_node: np.ndarray
    pinned_nodes: np.ndarray
    n_conductive_nodes: int
    n_components: int
    grid: StaggeredGrid
    frequency_hz: float
    edge_conductance: np.ndarray

    @property
    def n_dofs(self) -> int:
        return self.dof_to_node.size

    def expand(self, reduced: np.ndarray) -> np.ndarray:
        """Scatter a reduced vector to the full node space (zeros elsewhere)."""
        full = np.zeros(self.grid.n_nodes, dtype=np.float64)
        full[self.dof_to_node] = reduced
        return full


def assemble_poisson(
    model: VoxelModel,
    grid: StaggeredGrid,
    vector_potential: np.ndarray,
    frequency_hz: float,
    *,
    pin: bool = True,
    use_triple_product: bool = False,
) -> PoissonSystem:
    """Assemble the conductivity-weighted Poisson system.

    Rows/columns are restricted to conductive nodes (those with a positive
    incident edge conductance); the lowest-index node of each conductive
    component is pinned to zero by row/column deletion, which makes the
    reduced matrix symmetric positive definite.  The right-hand side is the
    negated conductance-weighted divergence of the edge vector potential.

    ``use_triple_product`` assembles via an explicit sparse G^T * M * G
    product instead of the direct 7-point scatter; both paths must agree and
    the flag exists for cross-validation.
    """
    vector_potential = np.asarray(vector_potential, dtype=np.float64)
    if vector_potential.shape != (grid.n_edges,):
        raise ValueError(
            f"vector potential has length {vector_potential.size}, expected {grid.n_edges}"
        )
    w = edge_conductance(model, grid, frequency_hz)
    labels = conductive_component_labels(model, frequency_hz)
    cond_nodes = np.flatnonzero(labels >= 0)
    if cond_nodes.size == 0:
        raise EmptySystemError("model has no conductive voxels: empty Poisson system")
    _, first = np.unique(labels[cond_nodes], return_index=True)
    pinned = cond_nodes[np.sort(first)]
    n_components = pinned.size

    free_mask = labels >= 0
    if pin:
        free_mask[pinned] = False
    node_to_dof = np.full(grid.n_nodes, -1, dtype=np.int64)
    dof_to_node = np.flatnonzero(free_mask)
    node_to_dof[dof_to_node] = np.arange(dof_to_node.size)
    n = dof_to_node.size

    tails, heads = grid.edge_endpoints
    active = w > 0.0
    at, ah, aw = tails[active], heads[active], w[active]
    dt = node_to_dof[at]
    dh = node_to_dof[ah]

    if use_triple_product:
        g = build_gradient(grid)
        full = (g.T @ diags(w) @ g).tocsr()
        matrix = full[dof_to_node][:, dof_to_node].tocsr()
        matrix.sort_indices()
    else:
        rows = []
        cols = []
        vals = []
        keep_t = dt >= 0
        rows.append(dt[keep_t]); cols.append(dt[keep_t]); vals.append(aw[keep_t])
        keep_h = dh >= 0
        rows.append(dh[keep_h]); cols.append(dh[keep_h]); vals.append(aw[keep_h])
        both = keep_t & keep_h
        rows.append(dt[both]); cols.append(dh[both]); vals.append(-aw[both])
        rows.append(dh[both]); cols.append(dt[both]); vals.append(-aw[both])
        matrix = coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        ).tocsr()
        matrix.sort_indices()

    av = aw * vector_potential[active]
    rhs_full = np.bincount(at, weights=av, minlength=grid.n_nodes)
    rhs_full -= np.bincount(ah, weights=av, minlength=grid.n_nodes)
    rhs = rhs_full[dof_to_node]

    if pin and n > 0 and matrix.diagonal().min() <= 0.0:
        raise EmptySystemError("reduced system has a non-positive diagonal entry")

    return PoissonSystem(
        matrix=matrix,
        rhs=rhs,
        node_to_dof=node_to_dof,
        dof_to_node=dof_to_node,
        pinned_nodes=pinned,
        n_conductive_nodes=int(cond_nodes.size),
        n_components=int(n_components),
        grid=grid,
        frequency_hz=float(frequency_hz),
        edge_conductance=w,
    )


# ---------------------------------------------------------------------------
# Matrix Market exchange
# ---------------------------------------------------------------------------

def write_matrix_market(matrix, path) -> None:
    """Write a sparse matrix in Matrix Market coordinate format (real, general)."""
    mmwrite(str(path), coo_matrix(matrix), field="real", symmetry="general")


def read_matrix_market(path) -> csr_matrix:
    m = mmread(str(path)).tocsr()
    m.sort_indices()
    return m
