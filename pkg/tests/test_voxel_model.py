import numpy as np
import pytest

from spfd.errors import GeometryError, PhantomFormatError, UnknownTissueError
from spfd.voxel_model import (
    ConductivitySamples,
    Tissue,
    VoxelModel,
    conductive_component_labels,
    kappa_at,
    load_model,
    make_phantom,
    save_model,
)

from conftest import block_model, voxel_flood_fill_components


def free_space_table():
    return {0: Tissue("free_space", ConductivitySamples.constant(0.0))}


def test_empty_model_load(tmp_path):
    model = VoxelModel(
        (2, 2, 2), (0.002,) * 3, (0.0,) * 3,
        np.zeros((2, 2, 2), dtype=np.uint16), free_space_table(),
    )
    path = tmp_path / "empty.vox"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.n_voxels == 8
    assert not np.any(loaded.conductive_mask(85e3))


def test_payload_size_mismatch(tmp_path):
    model = VoxelModel(
        (2, 2, 2), (0.002,) * 3, (0.0,) * 3,
        np.zeros((2, 2, 2), dtype=np.uint16), free_space_table(),
    )
    path = tmp_path / "bad.vox"
    save_model(model, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-9])  # 7 payload bytes for an 8-voxel u16 grid
    with pytest.raises(PhantomFormatError, match="payload size mismatch"):
        load_model(path)


def test_unknown_header_key(tmp_path):
    path = tmp_path / "bad.vox"
    path.write_bytes(
        b"format_version = 1\ndims = 1 1 1\nspacing_m = 1.0 1.0 1.0\n"
        b"origin_m = 0.0 0.0 0.0\nbogus = 3\nEND_HEADER\n\x00\x00"
    )
    with pytest.raises(PhantomFormatError, match="unknown header key"):
        load_model(path)


def test_missing_tissue_entry(tmp_path):
    path = tmp_path / "bad.vox"
    path.write_bytes(
        b"format_version = 1\ndims = 1 1 1\nspacing_m = 1.0 1.0 1.0\n"
        b"origin_m = 0.0 0.0 0.0\nEND_HEADER\n\x05\x00"
    )
    with pytest.raises(PhantomFormatError, match="tissue ID 5"):
        load_model(path)


def test_non_increasing_frequencies_rejected(tmp_path):
    path = tmp_path / "bad.vox"
    path.write_bytes(
        b"format_version = 1\ndims = 1 1 1\nspacing_m = 1.0 1.0 1.0\n"
        b"origin_m = 0.0 0.0 0.0\ntissue = 0 fs 1000.0:0.0 100.0:0.0\n"
        b"END_HEADER\n\x00\x00"
    )
    with pytest.raises(PhantomFormatError, match="increasing"):
        load_model(path)


def test_sphere_roundtrip_bit_identical(tmp_path):
    model = make_phantom("sphere", (12, 12, 12), 0.002, radius_m=0.01, kappa_spm=0.3)
    p1 = tmp_path / "a.vox"
    p2 = tmp_path / "b.vox"
    save_model(model, p1)
    save_model(load_model(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(load_model(p1).tissue_ids, model.tissue_ids)


class TestKappaAt:
    def test_constant_table(self):
        samples = ConductivitySamples(np.array([1e3, 1e5]), np.array([0.1, 0.1]))
        table = {
            0: Tissue("free_space", ConductivitySamples.constant(0.0)),
            1: Tissue("tissue", samples),
        }
        model = VoxelModel(
            (2, 2, 2), (0.002,) * 3, (0.0,) * 3,
            np.ones((2, 2, 2), dtype=np.uint16), table,
        )
        assert kappa_at(model, 1, 1e4) == pytest.approx(0.1, rel=1e-15)

    def test_loglog_midpoint(self):
        samples = ConductivitySamples(np.array([1e3, 1e5]), np.array([0.01, 1.0]))
        # geometric mean at the log-f midpoint
        assert samples.at(1e4) == pytest.approx(0.1, rel=1e-12)

    def test_free_space_is_zero(self):
        model = block_model((2, 2, 2))
        for f in (50.0, 85e3, 5e6):
            assert kappa_at(model, 0, f) == 0.0

    def test_exact_at_samples_and_clamped(self):
        samples = ConductivitySamples(np.array([1e3, 1e4, 1e5]), np.array([0.02, 0.3, 0.5]))
        assert samples.at(1e4) == 0.3
        assert samples.at(1.0) == 0.02
        assert samples.at(1e9) == 0.5

    def test_monotone_in_frequency(self):
        samples = ConductivitySamples(
            np.array([1e2, 1e3, 1e5, 1e6]), np.array([0.01, 0.05, 0.2, 1.4])
        )
        f = np.logspace(1, 7, 300)
        k = np.array([samples.at(v) for v in f])
        assert np.all(np.diff(k) >= -1e-15)

    def test_zero_endpoint_segment(self):
        samples = ConductivitySamples(np.array([1e3, 1e5]), np.array([0.0, 1.0]))
        assert samples.at(1e3) == 0.0
        assert samples.at(1e5) == 1.0
        assert 0.0 < samples.at(1e4) < 1.0

    def test_unknown_tissue(self):
        model = block_model((2, 2, 2))
        with pytest.raises(UnknownTissueError):
            kappa_at(model, 7, 85e3)


class TestMakePhantom:
    def test_zero_radius_sphere_empty(self):
        model = make_phantom("sphere", (8, 8, 8), 0.002, radius_m=0.0)
        assert not np.any(model.tissue_ids)

    def test_sphere_volume_oracle(self):
        dims, spacing, radius = (56, 56, 56), 0.002, 0.05
        model = make_phantom("sphere", dims, spacing, radius_m=radius)
        count = int(np.count_nonzero(model.tissue_ids))
        # independent center-inclusion count
        c = 0.5 * spacing * np.array(dims)
        xs = (np.arange(dims[0]) + 0.5) * spacing
        X = xs[:, None, None] - c[0]
        Y = xs[None, :, None] - c[1]
        Z = xs[None, None, :] - c[2]
        brute = int(np.count_nonzero(X**2 + Y**2 + Z**2 < radius**2))
        assert count == brute
        analytic = 4.0 / 3.0 * np.pi * radius**3 / spacing**3
        assert abs(count - analytic) / analytic < 0.05

    def test_cylinder_slices_identical(self):
        model = make_phantom("cylinder", (10, 10, 6), 0.002, radius_m=0.008)
        ids = model.tissue_ids
        for k in range(1, 6):
            assert np.array_equal(ids[:, :, k], ids[:, :, 0])

    def test_shape_exceeding_bounds(self):
        with pytest.raises(GeometryError):
            make_phantom("sphere", (8, 8, 8), 0.002, radius_m=0.05)

    def test_layered_block_layers(self):
        model = make_phantom(
            "layered-block", (4, 4, 8), 0.002, layers=4, kappa_spm=[0.02, 2.0, 0.02, 2.0]
        )
        ids = model.tissue_ids
        assert set(np.unique(ids)) == {1, 2, 3, 4}
        # layers stacked along z
        for k in range(8):
            assert len(np.unique(ids[:, :, k])) == 1
        assert kappa_at(model, 2, 85e3) / kappa_at(model, 1, 85e3) == pytest.approx(100.0)


class TestComponents:
    def test_all_free_space(self):
        model = VoxelModel(
            (3, 3, 3), (0.002,) * 3, (0.0,) * 3,
            np.zeros((3, 3, 3), dtype=np.uint16), free_space_table(),
        )
        labels = conductive_component_labels(model, 85e3)
        assert not np.any(labels >= 0)

    def test_single_sphere_one_component(self):
        model = make_phantom("sphere", (12, 12, 12), 0.002, radius_m=0.008)
        labels = conductive_component_labels(model, 85e3)
        assert labels.max() == 0

    def test_two_separated_blocks(self):
        ids = np.zeros((9, 4, 4), dtype=np.uint16)
        ids[:3] = 1
        ids[6:] = 1
        table = {
            0: Tissue("free_space", ConductivitySamples.constant(0.0)),
            1: Tissue("tissue", ConductivitySamples.constant(0.2)),
        }
        model = VoxelModel((9, 4, 4), (0.002,) * 3, (0.0,) * 3, ids, table)
        labels = conductive_component_labels(model, 85e3)
        assert labels.max() == 1
        assert voxel_flood_fill_components(ids > 0) == 2

    def test_component_count_matches_voxel_oracle(self, rng):
        # random boxes separated by >= 1 empty plane along x, grids <= 32^3
        for trial in range(5):
            n = int(rng.integers(12, 33))
            ids = np.zeros((n, n, n), dtype=np.uint16)
            x = 0
            while x + 2 < n:
                width = int(rng.integers(1, 4))
                if rng.random() < 0.7:
                    y0, z0 = rng.integers(0, n - 2, size=2)
                    y1 = y0 + int(rng.integers(1, n - y0))
                    z1 = z0 + int(rng.integers(1, n - z0))
                    ids[x:x + width, y0:y1, z0:z1] = 1
                x += width + 1 + int(rng.integers(0, 3))
            table = {
                0: Tissue("free_space", ConductivitySamples.constant(0.0)),
                1: Tissue("tissue", ConductivitySamples.constant(0.2)),
            }
            model = VoxelModel((n, n, n), (0.002,) * 3, (0.0,) * 3, ids, table)
            labels = conductive_component_labels(model, 85e3)
            n_components = int(labels.max()) + 1
            assert n_components == voxel_flood_fill_components(ids > 0)

    def test_labels_deterministic_and_contiguous(self):
        model = make_phantom("sphere", (10, 10, 10), 0.002, radius_m=0.007)
        a = conductive_component_labels(model, 85e3)
        b = conductive_component_labels(model, 85e3)
        assert np.array_equal(a, b)
        used = np.unique(a[a >= 0])
        assert np.array_equal(used, np.arange(used.size))
