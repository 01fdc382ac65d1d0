"""Tree-cotree gauging: recover an edge vector potential from face fluxes.

The flux-circulation system is over-determined; fixing the potential to zero
on a spanning tree of the node graph leaves exactly one unknown per cotree
edge, which greedy face elimination determines one face circulation at a
time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import eliminate_cotree_edges
from .errors import GaugingStallError, IncompatibleFluxError
from .fit_operators import StaggeredGrid


@dataclass(frozen=True)
class SpanningTree:
    """Spanning tree of the grid node graph with O(1) parent lookups."""

    edge_mask: np.ndarray      # bool per edge, True on tree edges
    root: int
    parent_node: np.ndarray    # int64 per node, -1 at the root
    parent_edge: np.ndarray    # int64 per node, edge to parent, -1 at the root

    @property
    def n_tree_edges(self) -> int:
        return int(np.count_nonzero(self.edge_mask))


def build_comb_tree(grid: StaggeredGrid) -> SpanningTree:
    """Deterministic comb tree rooted at node (0, 0, 0).

    Tree edges: x-edges along the line (., 0, 0), y-edges in the plane
    (., ., 0), and every z-edge; each node therefore reaches the root by
    descending in z, then y, then x.
    """
    nx, ny, nz = grid.dims
    mask = np.zeros(grid.n_edges, dtype=bool)
    parent_node = np.full(grid.n_nodes, -1, dtype=np.int64)
    parent_edge = np.full(grid.n_nodes, -1, dtype=np.int64)

    if nx > 0:
        i = np.arange(nx)
        e = grid.edge_index(0, i, 0, 0)
        mask[e] = True
        child = grid.node_index(i + 1, 0, 0)
        parent_node[child] = grid.node_index(i, 0, 0)
        parent_edge[child] = e
    if ny > 0:
        i, j = np.meshgrid(np.arange(nx + 1), np.arange(ny), indexing="ij")
        i, j = i.ravel(order="F"), j.ravel(order="F")
        e = grid.edge_index(1, i, j, 0)
        mask[e] = True
        child = grid.node_index(i, j + 1, 0)
        parent_node[child] = grid.node_index(i, j, 0)
        parent_edge[child] = e
    if nz > 0:
        i, j, k = np.meshgrid(
            np.arange(nx + 1), np.arange(ny + 1), np.arange(nz), indexing="ij"
        )
        i, j, k = i.ravel(order="F"), j.ravel(order="F"), k.ravel(order="F")
        e = grid.edge_index(2, i, j, k)
        mask[e] = True
        child = grid.node_index(i, j, k + 1)
        parent_node[child] = grid.node_index(i, j, k)
        parent_edge[child] = e
    return SpanningTree(mask, root=0, parent_node=parent_node, parent_edge=parent_edge)


def build_bfs_tree(grid: StaggeredGrid) -> SpanningTree:
    """Breadth-first spanning tree from node 0, deterministic frontier order.

    Retained as an alternative to the comb tree for robustness checks of the
    greedy elimination.
    """
    nx, ny, nz = grid.dims
    nd = grid.node_dims
    n = grid.n_nodes
    mask = np.zeros(grid.n_edges, dtype=bool)
    parent_node = np.full(n, -1, dtype=np.int64)
    parent_edge = np.full(n, -1, dtype=np.int64)
    visited = np.zeros(n, dtype=bool)
    visited[0] = True
    frontier = np.array([0], dtype=np.int64)

    strides = (1, nd[0], nd[0] * nd[1])
    while frontier.size:
        new = []
        fi = frontier % nd[0]
        fj = (frontier // nd[0]) % nd[1]
        fk = frontier // (nd[0] * nd[1])
        coords = (fi, fj, fk)
        for axis in range(3):
            for direction in (+1, -1):
                c = coords[axis]
                limit = c < grid.dims[axis] if direction > 0 else c > 0
                src = frontier[limit]
                if src.size == 0:
                    continue
                dst = src + direction * strides[axis]
                fresh = ~visited[dst]
                src, dst = src[fresh], dst[fresh]
                if src.size == 0:
                    continue
                ec = [coords[0][limit][fresh], coords[1][limit][fresh], coords[2][limit][fresh]]
                if direction < 0:
                    ec[axis] = ec[axis] - 1
                e = grid.edge_index(axis, *ec)
                visited[dst] = True
                mask[e] = True
                parent_node[dst] = src
                parent_edge[dst] = e
                new.append(dst)
        frontier = np.sort(np.concatenate(new)) if new else np.empty(0, dtype=np.int64)
    return SpanningTree(mask, root=0, parent_node=parent_node, parent_edge=parent_edge)


def build_tree(grid: StaggeredGrid, kind: str = "comb") -> SpanningTree:
    if kind == "comb":
        return build_comb_tree(grid)
    if kind == "bfs":
        return build_bfs_tree(grid)
    raise ValueError(f"unknown tree kind {kind!r}")


def circulation_residual(values: np.ndarray, fluxes: np.ndarray, grid: StaggeredGrid) -> np.ndarray:
    """Per-face circulation defect (circulation of values minus flux)."""
    edges, signs = grid.face_edge_incidence
    circ = np.einsum("fm,fm->f", values[edges], signs.astype(np.float64))
    return circ - fluxes


def gauge_vector_potential(
    fluxes: np.ndarray,
    grid: StaggeredGrid,
    tree: SpanningTree,
    tol: float = 1e-10,
) -> np.ndarray:
    """Edge vector potential with zero tree-edge entries reproducing the fluxes.

    Requires (near-)compatible fluxes: the cell-wise net outflux must vanish
    relative to ``tol`` (run divergence cleaning first otherwise).  After
    elimination the circulation residual over all faces, including redundant
    ones never popped from the queue, is checked against ``tol``.
    """
    fluxes = np.asarray(fluxes, dtype=np.float64)
    if fluxes.shape != (grid.n_faces,):
        raise ValueError(f"flux vector has length {fluxes.size}, expected {grid.n_faces}")
    values = np.zeros(grid.n_edges, dtype=np.float64)
    flux_norm = float(np.linalg.norm(fluxes))
    if flux_norm == 0.0:
        return values

    edges, signs = grid.face_edge_incidence
    known = tree.edge_mask.astype(np.uint8)
    counts = (4 - known[edges].sum(axis=1)).astype(np.int64)
    undetermined = eliminate_cotree_edges(
        edges, signs, fluxes, known, values, counts
    )
    if undetermined:
        raise GaugingStallError(int(undetermined))

    defect = circulation_residual(values, fluxes, grid)
    rel = float(np.linalg.norm(defect)) / flux_norm
    if rel > tol:
        worst = int(np.argmax(np.abs(defect)))
        raise IncompatibleFluxError(rel, worst, float(defect[worst]))
    return values
