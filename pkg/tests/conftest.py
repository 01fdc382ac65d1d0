"""Shared fixtures and oracle helpers."""

import numpy as np
import pytest
import scipy.sparse as sp

from spfd.fit_operators import StaggeredGrid
from spfd.voxel_model import ConductivitySamples, Tissue, VoxelModel


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def block_model(dims, kappa=0.2, spacing=0.002):
    """Homogeneous conductive block filling the whole grid."""
    dims = tuple(dims)
    ids = np.ones(dims, dtype=np.uint16)
    table = {
        0: Tissue("free_space", ConductivitySamples.constant(0.0)),
        1: Tissue("tissue", ConductivitySamples.constant(kappa)),
    }
    return VoxelModel(dims, (spacing,) * 3, (0.0, 0.0, 0.0), ids, table)


def grid_of(model):
    return StaggeredGrid.from_model(model)


def laplacian_3d(n):
    """Independent 7-point Laplacian on an n^3 grid via Kronecker products."""
    d = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1])
    eye = sp.identity(n)
    return (
        sp.kron(sp.kron(d, eye), eye)
        + sp.kron(sp.kron(eye, d), eye)
        + sp.kron(sp.kron(eye, eye), d)
    ).tocsr()


def voxel_flood_fill_components(mask):
    """Brute-force 6-neighbourhood component count over conductive voxels."""
    mask = np.asarray(mask, dtype=bool)
    seen = np.zeros_like(mask)
    count = 0
    nx, ny, nz = mask.shape
    for start in zip(*np.nonzero(mask)):
        if seen[start]:
            continue
        count += 1
        stack = [start]
        seen[start] = True
        while stack:
            i, j, k = stack.pop()
            for di, dj, dk in (
                (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1),
            ):
                a, b, c = i + di, j + dj, k + dk
                if 0 <= a < nx and 0 <= b < ny and 0 <= c < nz:
                    if mask[a, b, c] and not seen[a, b, c]:
                        seen[a, b, c] = True
                        stack.append((a, b, c))
    return count
