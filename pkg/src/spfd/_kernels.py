"""Sequential hot loops compiled with numba.

Both kernels are inherently order-dependent (FIFO queue, greedy index-order
scan) and are jitted so the deterministic reference algorithm is also the
fast path.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def eliminate_cotree_edges(face_edges, face_signs, fluxes, known, values, counts):
    """Greedy face elimination for tree-cotree gauging.

    ``known``/``values`` hold the per-edge determined flags and results and
    are updated in place; ``counts`` is the per-face number of undetermined
    boundary edges.  Faces enter a FIFO queue (seeded in face-index order)
    once they have exactly one undetermined edge; popping a face solves its
    4-term circulation for that edge.  Returns the number of edges still
    undetermined when the queue runs dry (0 on success).
    """
    n_faces = face_edges.shape[0]
    undetermined = 0
    for e in range(known.size):
        if known[e] == 0:
            undetermined += 1

    # edge -> incident faces (CSR), built by counting sort for determinism
    n_edges = known.size
    deg = np.zeros(n_edges + 1, dtype=np.int64)
    for f in range(n_faces):
        for m in range(4):
            deg[face_edges[f, m] + 1] += 1
    indptr = np.cumsum(deg)
    cursor = indptr[:-1].copy()
    incident = np.empty(4 * n_faces, dtype=np.int64)
    for f in range(n_faces):
        for m in range(4):
            e = face_edges[f, m]
            incident[cursor[e]] = f
            cursor[e] += 1

    queue = np.empty(n_faces, dtype=np.int64)
    tail = 0
    for f in range(n_faces):
        if counts[f] == 1:
            queue[tail] = f
            tail += 1
    head = 0
    while head < tail:
        f = queue[head]
        head += 1
        if counts[f] != 1:
            continue
        acc = 0.0
        unknown_edge = -1
        unknown_sign = 0.0
        for m in range(4):
            e = face_edges[f, m]
            s = face_signs[f, m]
            if known[e]:
                acc += s * values[e]
            else:
                unknown_edge = e
                unknown_sign = s
        values[unknown_edge] = (fluxes[f] - acc) / unknown_sign
        known[unknown_edge] = 1
        undetermined -= 1
        for p in range(indptr[unknown_edge], indptr[unknown_edge + 1]):
            g = incident[p]
            counts[g] -= 1
            if counts[g] == 1:
                queue[tail] = g
                tail += 1
    return undetermined


@njit(cache=True)
def plain_aggregation(indptr, indices, strengths, n):
    """Greedy root-node aggregation over a strength-of-connection graph.

    Pass 1 scans nodes in index order; a node none of whose strong neighbours
    is aggregated yet becomes a root and absorbs them all.  Pass 2 attaches
    each remaining node to the aggregate of its strongest aggregated
    neighbour (ties to the lowest index); nodes with none become singletons.
    Returns (aggregate_id per node, number of aggregates).
    """
    agg = np.full(n, -1, dtype=np.int32)
    n_agg = 0
    for i in range(n):
        if agg[i] != -1:
            continue
        free = True
        for p in range(indptr[i], indptr[i + 1]):
            if agg[indices[p]] != -1:
                free = False
                break
        if not free:
            continue
        agg[i] = n_agg
        for p in range(indptr[i], indptr[i + 1]):
            agg[indices[p]] = n_agg
        n_agg += 1
    for i in range(n):
        if agg[i] != -1:
            continue
        best = -1
        best_strength = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if agg[j] != -1 and strengths[p] > best_strength:
                best_strength = strengths[p]
                best = j
        if best != -1:
            agg[i] = agg[best]
        else:
            agg[i] = n_agg
            n_agg += 1
    return agg, n_agg
