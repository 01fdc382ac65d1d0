"""Command-line interface.

Subcommands: ``phantom`` (generate a voxel phantom), ``field`` (generate a
field sample file), ``run`` (end-to-end exposure computation), ``bench``
(repeated-run timing statistics), ``report-slice`` (plot-ready plane of a
field dump), ``mm-export`` (Poisson matrix in Matrix Market form).

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .dosimetry import load_field_dump
from .errors import SpfdError
from .field_source import CoilSpec, Lattice, UniformField, sample_on_lattice, save_samples
from .fit_operators import StaggeredGrid, assemble_poisson, write_matrix_market
from .linsolve import SolveConfig
from .pipeline import PipelineConfig, run_benchmark, run_pipeline
from .voxel_model import load_model, make_phantom, save_model


def _add_solver_flags(p: argparse.ArgumentParser):
    p.add_argument("--freq-hz", type=float, default=85e3, help="field frequency (Hz)")
    p.add_argument("--rel-tol", type=float, default=1e-12, help="solver relative residual target")
    p.add_argument("--threads", type=int, default=None,
                   help="solver worker cap (default: SPFD_THREADS or auto)")


def _add_source_flags(p: argparse.ArgumentParser):
    p.add_argument("--field", metavar="PATH", help="field sample file")
    p.add_argument("--uniform", type=float, metavar="BZ",
                   help="uniform flux density along z (tesla)")
    p.add_argument("--coil-center", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--coil-axis", type=float, nargs=3, default=(0.0, 0.0, 1.0),
                   metavar=("AX", "AY", "AZ"))
    p.add_argument("--coil-radius-m", type=float)
    p.add_argument("--coil-current-a", type=float, default=1.0)
    p.add_argument("--coil-segments", type=int, default=256)
    p.add_argument("--no-clean", action="store_true", help="skip divergence cleaning")
    p.add_argument("--clean-tol", type=float, default=1e-10)


def _pipeline_config(args, parser) -> PipelineConfig:
    sources = sum(x is not None for x in (args.field, args.uniform, args.coil_radius_m))
    if sources != 1:
        parser.error("exactly one of --field, --uniform, --coil-radius-m is required")
    coil = None
    if args.coil_radius_m is not None:
        if args.coil_center is None:
            parser.error("--coil-center is required with --coil-radius-m")
        coil = CoilSpec(
            center=tuple(args.coil_center),
            axis=tuple(args.coil_axis),
            radius_m=args.coil_radius_m,
            current_a=args.coil_current_a,
            segments=args.coil_segments,
        )
    threads = args.threads
    if threads is None and os.environ.get("SPFD_THREADS"):
        threads = int(os.environ["SPFD_THREADS"])
    return PipelineConfig(
        phantom_path=args.phantom,
        field_path=args.field,
        coil=coil,
        uniform_b=(0.0, 0.0, args.uniform) if args.uniform is not None else None,
        frequency_hz=args.freq_hz,
        solve=SolveConfig(rel_tol=args.rel_tol, threads=threads),
        clean_fluxes=not args.no_clean,
        clean_tol=args.clean_tol,
        out_report=getattr(args, "out_report", None),
        out_field=getattr(args, "out_field", None),
        latency_budget_s=getattr(args, "budget_s", 5.0),
        report_rms=getattr(args, "rms", False),
    )


def _cmd_phantom(args, parser) -> int:
    mm = 1e-3
    spacing = [s * mm for s in args.spacing_mm]
    if len(spacing) == 1:
        spacing = spacing * 3
    if len(spacing) != 3:
        parser.error("--spacing-mm takes 1 or 3 values")
    kwargs = dict(
        axis=args.axis,
        layers=args.layers,
        kappa_spm=args.kappa if len(args.kappa) > 1 else args.kappa[0],
        tissue_name=args.name,
    )
    if args.radius_mm is not None:
        kwargs["radius_m"] = args.radius_mm * mm
    if args.height_mm is not None:
        kwargs["height_m"] = args.height_mm * mm
    if args.size_mm is not None:
        kwargs["size_m"] = tuple(s * mm for s in args.size_mm)
    if args.center_mm is not None:
        kwargs["center_m"] = tuple(c * mm for c in args.center_mm)
    model = make_phantom(args.kind, tuple(args.dims), tuple(spacing), **kwargs)
    save_model(model, args.out)
    conductive = int(np.count_nonzero(model.tissue_ids))
    print(f"wrote {args.out}: dims {model.dims}, {conductive} conductive voxels")
    return 0


def _cmd_field(args, parser) -> int:
    lattice = Lattice(tuple(args.lattice_origin_m), tuple(args.lattice_spacing_m),
                      tuple(args.lattice_dims))
    if args.uniform is not None and args.coil_radius_m is not None:
        parser.error("choose one of --uniform, --coil-radius-m")
    if args.uniform is not None:
        source = UniformField((0.0, 0.0, args.uniform))
    elif args.coil_radius_m is not None:
        if args.coil_center is None:
            parser.error("--coil-center is required with --coil-radius-m")
        source = CoilSpec(tuple(args.coil_center), tuple(args.coil_axis),
                          args.coil_radius_m, args.coil_current_a, args.coil_segments)
    else:
        parser.error("one of --uniform, --coil-radius-m is required")
    samples = sample_on_lattice(source, lattice, args.freq_hz)
    save_samples(samples, args.out)
    print(f"wrote {args.out}: {samples.lattice.n_points} samples")
    return 0


def _cmd_run(args, parser) -> int:
    cfg = _pipeline_config(args, parser)
    report, timing = run_pipeline(cfg)
    print(f"frequency_hz = {report.frequency_hz}")
    print(f"dof_count = {report.dof_count}")
    print(f"n_voxels = {report.n_voxels}")
    print(f"p99_vpm = {report.percentile99_vpm}")
    print(f"max_vpm = {report.max_vpm}")
    print(f"solver_iterations = {report.solver.iterations}")
    print(f"solver_residual = {report.solver.rel_residual:.3e}")
    print("step timings [s]:")
    for name, value in timing.as_dict().items():
        print(f"  {name:<12} {value:.6f}")
    print(f"  {'total':<12} {timing.total:.6f}")
    budget = "met" if timing.budget_met else "EXCEEDED"
    print(f"latency budget {cfg.latency_budget_s:.1f} s: {budget}")
    return 0


def _cmd_bench(args, parser) -> int:
    if args.runs < 2:
        parser.error("--runs must be >= 2 (sample standard deviation needs n-1 > 0)")
    cfg = _pipeline_config(args, parser)
    result = run_benchmark(cfg, runs=args.runs)
    print(result.to_text())
    csv = result.to_csv()
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(csv)
        print(f"wrote {args.csv}")
    else:
        print(csv, end="")
    return 0


def _cmd_report_slice(args, parser) -> int:
    dump = load_field_dump(args.field_dump)
    axis = "xyz".index(args.plane)
    if not 0 <= args.index < dump.dims[axis]:
        print(
            f"error: index {args.index} out of range for plane {args.plane} "
            f"(0..{dump.dims[axis] - 1})",
            file=sys.stderr,
        )
        return 2
    sl = [slice(None)] * 3
    sl[axis] = args.index
    plane = dump.values[tuple(sl)]
    # rows iterate the later remaining axis, columns the earlier one
    for row in plane.T:
        print(" ".join(repr(float(v)) for v in row))
    return 0


def _cmd_mm_export(args, parser) -> int:
    model = load_model(args.phantom)
    grid = StaggeredGrid.from_model(model)
    potential = np.zeros(grid.n_edges)
    system = assemble_poisson(model, grid, potential, args.freq_hz)
    write_matrix_market(system.matrix, args.out)
    print(f"wrote {args.out}: {system.matrix.shape[0]} x {system.matrix.shape[1]}, "
          f"{system.matrix.nnz} nonzeros")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spfd",
        description="Induced electric field dosimetry in voxel phantoms "
                    "from sampled magnetic flux density",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a voxel phantom file")
    p.add_argument("--kind", required=True,
                   choices=("sphere", "cylinder", "block", "layered-block"))
    p.add_argument("--dims", type=int, nargs=3, required=True, metavar=("NX", "NY", "NZ"))
    p.add_argument("--spacing-mm", type=float, nargs="+", required=True)
    p.add_argument("--radius-mm", type=float)
    p.add_argument("--height-mm", type=float)
    p.add_argument("--size-mm", type=float, nargs=3)
    p.add_argument("--center-mm", type=float, nargs=3)
    p.add_argument("--axis", choices=("x", "y", "z"), default="z")
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--kappa", type=float, nargs="+", default=[0.2],
                   help="conductivity (S/m); one value per layer for layered-block")
    p.add_argument("--name", default="tissue")
    p.add_argument("--out", required=True)

    p = sub.add_parser("field", help="generate a field sample file")
    p.add_argument("--lattice-dims", type=int, nargs=3, required=True)
    p.add_argument("--lattice-origin-m", type=float, nargs=3, required=True)
    p.add_argument("--lattice-spacing-m", type=float, nargs=3, required=True)
    p.add_argument("--uniform", type=float, metavar="BZ")
    p.add_argument("--coil-center", type=float, nargs=3)
    p.add_argument("--coil-axis", type=float, nargs=3, default=(0.0, 0.0, 1.0))
    p.add_argument("--coil-radius-m", type=float)
    p.add_argument("--coil-current-a", type=float, default=1.0)
    p.add_argument("--coil-segments", type=int, default=256)
    p.add_argument("--freq-hz", type=float, default=85e3)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="end-to-end exposure computation")
    p.add_argument("--phantom", required=True)
    _add_source_flags(p)
    _add_solver_flags(p)
    p.add_argument("--out-report")
    p.add_argument("--out-field")
    p.add_argument("--budget-s", type=float, default=5.0)
    p.add_argument("--rms", action="store_true", help="report RMS instead of amplitudes")

    p = sub.add_parser("bench", help="repeated-run timing statistics")
    p.add_argument("--phantom", required=True)
    _add_source_flags(p)
    _add_solver_flags(p)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--csv", help="write machine-readable CSV here")

    p = sub.add_parser("report-slice", help="print one plane of a field dump")
    p.add_argument("--field-dump", required=True)
    p.add_argument("--plane", choices=("x", "y", "z"), required=True)
    p.add_argument("--index", type=int, required=True)

    p = sub.add_parser("mm-export", help="export the Poisson matrix (Matrix Market)")
    p.add_argument("--phantom", required=True)
    p.add_argument("--freq-hz", type=float, default=85e3)
    p.add_argument("--out", required=True)

    return parser


_COMMANDS = {
    "phantom": _cmd_phantom,
    "field": _cmd_field,
    "run": _cmd_run,
    "bench": _cmd_bench,
    "report-slice": _cmd_report_slice,
    "mm-export": _cmd_mm_export,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args, parser)
    except (SpfdError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
