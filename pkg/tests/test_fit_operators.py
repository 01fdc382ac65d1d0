import numpy as np
import pytest

from spfd.errors import EmptySystemError
from spfd.fit_operators import (
    StaggeredGrid,
    assemble_poisson,
    build_curl,
    build_divergence,
    build_gradient,
    build_mkappa,
    edge_conductance,
    read_matrix_market,
    write_matrix_market,
)
from spfd.voxel_model import (
    ConductivitySamples,
    Tissue,
    VoxelModel,
    conductive_component_labels,
    make_phantom,
)

from conftest import block_model, grid_of


def test_counts_single_voxel():
    g = StaggeredGrid((1, 1, 1), (1.0, 1.0, 1.0))
    grad = build_gradient(g)
    curl = build_curl(g)
    div = build_divergence(g)
    assert grad.shape == (12, 8) and grad.nnz == 24
    assert curl.shape == (6, 12) and curl.nnz == 24
    assert div.shape == (1, 6) and div.nnz == 6


def test_gradient_nullspace_and_stencil():
    g = StaggeredGrid((3, 4, 5), (0.002, 0.003, 0.004))
    grad = build_gradient(g)
    assert np.all((grad @ np.ones(g.n_nodes)) == 0.0)
    # nodal x-coordinate field: +dx on x-edges, zero elsewhere
    nd = g.node_dims
    psi = np.broadcast_to(
        0.002 * np.arange(nd[0])[:, None, None], nd
    ).ravel(order="F")
    ex, ey, ez = g.edge_blocks(grad @ psi)
    assert np.allclose(ex, 0.002, rtol=1e-15)
    assert np.all(ey == 0.0) and np.all(ez == 0.0)


@pytest.mark.parametrize("dims", [(1, 1, 1), (2, 2, 2), (3, 4, 5), (5, 3, 2)])
def test_discrete_identities_exact(dims):
    g = StaggeredGrid(dims, (0.001, 0.002, 0.003))
    grad, curl, div = build_gradient(g), build_curl(g), build_divergence(g)
    cg = curl @ grad
    sc = div @ curl
    assert not cg.nnz or np.all(cg.data == 0.0)
    assert not sc.nnz or np.all(sc.data == 0.0)


def test_curl_of_constant_x_edges():
    g = StaggeredGrid((3, 3, 3), (1.0,) * 3)
    vec = np.zeros(g.n_edges)
    g.edge_blocks(vec)[0][:] = 2.5
    circ = build_curl(g) @ vec
    fz = g.face_blocks(circ)[2]
    assert np.all(fz == 0.0)  # equal and opposite x-edge contributions


def test_divergence_of_uniform_z_flux():
    g = StaggeredGrid((4, 3, 2), (1.0,) * 3)
    vec = np.zeros(g.n_faces)
    g.face_blocks(vec)[2][:] = 7.0
    assert np.all((build_divergence(g) @ vec) == 0.0)


def test_divergence_of_curl_random_integers(rng):
    g = StaggeredGrid((4, 4, 4), (1.0,) * 3)
    a = rng.integers(-50, 51, g.n_edges).astype(np.float64)
    b = build_curl(g) @ a
    assert np.all((build_divergence(g) @ b) == 0.0)


class TestMkappa:
    def test_free_space_zero(self):
        model = VoxelModel(
            (3, 3, 3), (0.002,) * 3, (0.0,) * 3,
            np.zeros((3, 3, 3), dtype=np.uint16),
            {0: Tissue("free_space", ConductivitySamples.constant(0.0))},
        )
        m = build_mkappa(model, grid_of(model), 85e3)
        assert m.nnz == 0 or np.all(m.data == 0.0)

    def test_interior_and_surface_entries(self):
        model = block_model((4, 4, 4), kappa=0.2, spacing=0.002)
        g = grid_of(model)
        w = edge_conductance(model, g, 85e3)
        wx = g.edge_blocks(w)[0]
        # interior x-edge: 4 conductive neighbours -> kappa * dy*dz/dx
        assert wx[1, 2, 2] == pytest.approx(0.2 * 0.002, rel=1e-14)
        # face-interior surface edge: 2 of 4 neighbours conductive
        assert wx[1, 2, 0] == pytest.approx(0.5 * 0.2 * 0.002, rel=1e-14)
        # grid-corner edge: 1 of 4
        assert wx[1, 0, 0] == pytest.approx(0.25 * 0.2 * 0.002, rel=1e-14)

    def test_anisotropic_spacing_geometry(self):
        model = block_model((3, 3, 3))
        gs = StaggeredGrid((3, 3, 3), (0.001, 0.002, 0.004))
        w = edge_conductance(model, gs, 85e3)
        wy = gs.edge_blocks(w)[1]
        # y-edge geometry factor: dx*dz/dy
        assert wy[1, 1, 1] == pytest.approx(0.2 * 0.001 * 0.004 / 0.002, rel=1e-14)


class TestAssemble:
    def test_zero_potential_gives_zero_rhs(self):
        model = block_model((3, 3, 3))
        g = grid_of(model)
        system = assemble_poisson(model, g, np.zeros(g.n_edges), 85e3)
        assert np.all(system.rhs == 0.0)

    def test_empty_system(self):
        model = VoxelModel(
            (2, 2, 2), (0.002,) * 3, (0.0,) * 3,
            np.zeros((2, 2, 2), dtype=np.uint16),
            {0: Tissue("free_space", ConductivitySamples.constant(0.0))},
        )
        with pytest.raises(EmptySystemError):
            assemble_poisson(model, grid_of(model), np.zeros(grid_of(model).n_edges), 85e3)

    def test_gradient_field_consistency(self, rng):
        # a = grad(psi0) with psi0 zeroed at the pinned node: A(-psi0) = rhs
        model = make_phantom("sphere", (8, 8, 8), 0.002, radius_m=0.006)
        g = grid_of(model)
        psi0 = rng.standard_normal(g.n_nodes)
        a = build_gradient(g) @ psi0
        system = assemble_poisson(model, g, a, 85e3)
        labels = conductive_component_labels(model, 85e3)
        shifted = psi0.copy()
        for comp, node in enumerate(system.pinned_nodes):
            shifted[labels == comp] -= psi0[node]
        lhs = system.matrix @ (-shifted[system.dof_to_node])
        assert np.linalg.norm(lhs - system.rhs) <= 1e-12 * np.linalg.norm(system.rhs)

    def test_hand_assembled_seven_point_stencil(self):
        # 3^3 homogeneous cube, brute-force dense assembly over all edges
        model = block_model((3, 3, 3), kappa=0.4, spacing=0.001)
        g = grid_of(model)
        system = assemble_poisson(model, g, np.zeros(g.n_edges), 85e3)
        w = edge_conductance(model, g, 85e3)
        tails, heads = g.edge_endpoints
        n = g.n_nodes
        dense = np.zeros((n, n))
        for t, h, we in zip(tails, heads, w):
            dense[t, t] += we
            dense[h, h] += we
            dense[t, h] -= we
            dense[h, t] -= we
        keep = system.dof_to_node
        assert np.array_equal(system.matrix.toarray(), dense[np.ix_(keep, keep)])

    def test_triple_product_path_agrees(self, rng):
        model = make_phantom("sphere", (7, 7, 7), 0.002, radius_m=0.005)
        g = grid_of(model)
        a = rng.standard_normal(g.n_edges)
        direct = assemble_poisson(model, g, a, 85e3)
        triple = assemble_poisson(model, g, a, 85e3, use_triple_product=True)
        diff = (direct.matrix - triple.matrix).tocsr()
        diff.eliminate_zeros()
        scale = np.abs(direct.matrix.data).max()
        assert diff.nnz == 0 or np.abs(diff.data).max() <= 1e-14 * scale
        assert np.allclose(direct.rhs, triple.rhs, rtol=1e-13, atol=1e-20)

    def test_symmetry_and_zero_row_sums_before_pinning(self):
        model = make_phantom("sphere", (8, 8, 8), 0.002, radius_m=0.006)
        g = grid_of(model)
        sys_unpinned = assemble_poisson(model, g, np.zeros(g.n_edges), 85e3, pin=False)
        m = sys_unpinned.matrix
        asym = (m - m.T).tocsr()
        asym.eliminate_zeros()
        assert asym.nnz == 0
        rowsums = np.asarray(m.sum(axis=1)).ravel()
        assert np.abs(rowsums).max() <= 1e-13 * np.abs(m.diagonal()).max()
        # Gershgorin: diagonal equals negated off-diagonal row sum
        offdiag = rowsums - m.diagonal()
        assert np.allclose(m.diagonal(), -offdiag, rtol=1e-13)

    @pytest.mark.parametrize("dims", [(3, 3, 3), (5, 5, 5), (6, 6, 6)])
    def test_positive_definite_after_pinning(self, dims):
        model = make_phantom("sphere", dims, 0.002, radius_m=0.4 * 0.002 * dims[0])
        g = grid_of(model)
        system = assemble_poisson(model, g, np.zeros(g.n_edges), 85e3)
        eigs = np.linalg.eigvalsh(system.matrix.toarray())
        assert eigs.min() > 0.0

    def test_dof_count_invariant(self):
        model = make_phantom("cylinder", (10, 10, 6), 0.002, radius_m=0.007)
        g = grid_of(model)
        system = assemble_poisson(model, g, np.zeros(g.n_edges), 85e3)
        assert system.n_dofs == system.n_conductive_nodes - system.n_components
        labels = conductive_component_labels(model, 85e3)
        assert system.n_conductive_nodes == int(np.count_nonzero(labels >= 0))


def test_matrix_market_roundtrip(tmp_path):
    model = make_phantom("sphere", (6, 6, 6), 0.002, radius_m=0.004)
    g = grid_of(model)
    system = assemble_poisson(model, g, np.zeros(g.n_edges), 85e3)
    path = tmp_path / "a.mtx"
    write_matrix_market(system.matrix, path)
    back = read_matrix_market(path)
    diff = (system.matrix - back).tocsr()
    diff.eliminate_zeros()
    assert diff.nnz == 0
    assert path.read_text().splitlines()[0].endswith("real general")
