import math

import numpy as np
import pytest

from spfd.errors import PipelineError
from spfd.pipeline import (
    PipelineConfig,
    run_benchmark,
    run_pipeline,
    summarize_runs,
)
from spfd.voxel_model import ConductivitySamples, Tissue, VoxelModel, make_phantom


def sphere_config(**overrides):
    model = make_phantom("sphere", (20, 20, 20), 0.002, radius_m=0.015, kappa_spm=0.2)
    base = dict(model=model, uniform_b=(0.0, 0.0, 1e-6), frequency_hz=85e3)
    base.update(overrides)
    return PipelineConfig(**base)


class TestRunPipeline:
    def test_smoke_uniform_sphere(self):
        report, timing = run_pipeline(sphere_config())
        assert report.percentile99_vpm > 0.0
        assert report.percentile99_vpm <= report.max_vpm
        assert all(v >= 0.0 for v in timing.as_dict().values())
        assert report.solver.converged

    def test_free_space_phantom_fails_in_assemble(self):
        model = VoxelModel(
            (4, 4, 4), (0.002,) * 3, (0.0,) * 3,
            np.zeros((4, 4, 4), dtype=np.uint16),
            {0: Tissue("free_space", ConductivitySamples.constant(0.0))},
        )
        cfg = PipelineConfig(model=model, uniform_b=(0, 0, 1e-6))
        with pytest.raises(PipelineError) as info:
            run_pipeline(cfg)
        assert info.value.step == "assemble"

    def test_zero_amplitude_field(self):
        report, timing = run_pipeline(sphere_config(uniform_b=(0.0, 0.0, 0.0)))
        assert report.percentile99_vpm == 0.0
        assert report.solver.iterations == 0
        assert timing.budget_met

    def test_total_equals_sum_of_steps(self):
        _, timing = run_pipeline(sphere_config())
        assert timing.total == pytest.approx(sum(timing.as_dict().values()), abs=1e-3)

    def test_bit_identical_rerun(self):
        cfg = sphere_config()
        r1, _ = run_pipeline(cfg)
        r2, _ = run_pipeline(cfg)
        assert np.array_equal(r1.voxel_field, r2.voxel_field)
        assert np.array_equal(r1.voxel_indices, r2.voxel_indices)
        assert r1.percentile99_vpm == r2.percentile99_vpm

    def test_missing_phantom_file(self, tmp_path):
        cfg = PipelineConfig(phantom_path=str(tmp_path / "nope.vox"), uniform_b=(0, 0, 1e-6))
        with pytest.raises(PipelineError) as info:
            run_pipeline(cfg)
        assert info.value.step == "load"
        assert "nope.vox" in str(info.value)

    def test_output_files_written(self, tmp_path):
        out_r = tmp_path / "report.txt"
        out_f = tmp_path / "field.dump"
        cfg = sphere_config(out_report=str(out_r), out_field=str(out_f))
        run_pipeline(cfg)
        assert out_r.exists() and out_f.exists()
        assert "p99_vpm = " in out_r.read_text()

    def test_config_validation(self):
        model = make_phantom("sphere", (8, 8, 8), 0.002, radius_m=0.005)
        with pytest.raises(ValueError):
            PipelineConfig(model=model)  # no source
        with pytest.raises(ValueError):
            PipelineConfig(model=model, uniform_b=(0, 0, 1e-6), field_path="x")
        with pytest.raises(ValueError):
            PipelineConfig(model=model, uniform_b=(0, 0, 1e-6), latency_budget_s=0.0)

    def test_coil_source_end_to_end(self):
        from spfd.field_source import CoilSpec

        model = make_phantom("sphere", (12, 12, 12), 0.002, radius_m=0.009)
        coil = CoilSpec((0.012, 0.012, -0.05), (0, 0, 1), 0.05, 100.0, 64)
        cfg = PipelineConfig(model=model, coil=coil, coil_lattice_dims=(7, 7, 7))
        report, _ = run_pipeline(cfg)
        assert report.percentile99_vpm > 0.0

    def test_field_file_source(self, tmp_path):
        from spfd.field_source import Lattice, UniformField, sample_on_lattice, save_samples
        from spfd.fit_operators import StaggeredGrid
        from spfd.voxel_model import save_model

        model = make_phantom("sphere", (12, 12, 12), 0.002, radius_m=0.009)
        grid = StaggeredGrid.from_model(model)
        samples = sample_on_lattice(
            UniformField((0, 0, 1e-6)), Lattice.covering(grid, (3, 3, 3)), 85e3
        )
        fpath = tmp_path / "field.txt"
        save_samples(samples, fpath)
        ppath = tmp_path / "sphere.vox"
        save_model(model, ppath)
        cfg = PipelineConfig(phantom_path=str(ppath), field_path=str(fpath))
        report, _ = run_pipeline(cfg)
        ref, _ = run_pipeline(PipelineConfig(model=model, uniform_b=(0, 0, 1e-6)))
        assert report.percentile99_vpm == pytest.approx(ref.percentile99_vpm, rel=1e-12)


class TestBenchmark:
    def test_constant_timings_hook(self):
        result = run_benchmark(
            sphere_config(), runs=5,
            timings_override={s: [1.0] * 5 for s in
                              ("interpolate", "gauge", "assemble", "solve", "efield", "report")},
        )
        stats = result.steps["solve"]
        assert stats.mean == 1.0 and stats.stddev == 0.0
        assert result.steps["total"].mean == 6.0

    def test_hand_computed_stddev_hook(self):
        result = run_benchmark(
            sphere_config(), runs=5,
            timings_override={"solve": [1.0, 2.0, 3.0, 4.0, 5.0]},
        )
        stats = result.steps["solve"]
        assert stats.mean == 3.0
        assert stats.stddev == pytest.approx(math.sqrt(2.5), rel=1e-15)
        assert stats.min == 1.0 and stats.max == 5.0

    def test_runs_validation(self):
        with pytest.raises(ValueError):
            run_benchmark(sphere_config(), runs=1)
        with pytest.raises(ValueError):
            summarize_runs({"solve": [1.0]})

    def test_real_benchmark_runs(self):
        result = run_benchmark(sphere_config(), runs=2)
        assert result.runs == 2
        assert set(result.steps) == {
            "interpolate", "gauge", "assemble", "solve", "efield", "report", "total"}
        assert len(result.iterations) == 2
        # deterministic solves: identical iteration counts across runs
        assert result.iterations[0] == result.iterations[1]
        assert result.setup_seconds > 0.0
        for stats in result.steps.values():
            assert stats.mean >= stats.min >= 0.0
            assert stats.max >= stats.mean
        csv = result.to_csv()
        lines = csv.strip().splitlines()
        assert lines[0] == "step,mean_s,stddev_s,min_s,max_s"
        assert len(lines) == 8  # 6 steps + total + header
