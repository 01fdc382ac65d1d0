"""Electric field reconstruction, voxel statistics, and exposure reporting.

The reconstruction chain: edge voltages from the gauged vector potential and
the solved nodal potential; per-node field strength as the per-axis mean of
incident conductive edge voltages over edge length; per-voxel strength as
the mean of the eight corner nodes; percentile and per-tissue statistics on
the conductive voxels.  All values are single-phase amplitudes (the 90 degree
phase common to every edge is dropped); RMS reporting divides by sqrt(2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np

from .errors import PhantomFormatError
from .fit_operators import PoissonSystem, StaggeredGrid, edge_conductance
from .linsolve import SolveReport
from .voxel_model import FREE_SPACE_ID, VoxelModel, encode_header, parse_header

RMS_FACTOR = 1.0 / math.sqrt(2.0)


def edge_voltages(
    vector_potential: np.ndarray,
    potential_reduced: np.ndarray,
    system: PoissonSystem,
    omega: float,
) -> np.ndarray:
    """Signed edge voltage amplitudes  omega * (a + grad psi)  (volt).

    The reduced potential is expanded with zeros on pinned and excluded
    nodes.  Every edge receives a value; edges with zero conductance are
    excluded downstream.
    """
    grid = system.grid
    vector_potential = np.asarray(vector_potential, dtype=np.float64)
    if vector_potential.shape != (grid.n_edges,):
        raise ValueError(
            f"vector potential has length {vector_potential.size}, expected {grid.n_edges}"
        )
    psi = system.expand(np.asarray(potential_reduced, dtype=np.float64))
    tails, heads = grid.edge_endpoints
    return omega * (vector_potential + psi[heads] - psi[tails])


def node_field_strength(
    voltages: np.ndarray,
    grid: StaggeredGrid,
    model: VoxelModel,
    frequency_hz: float,
) -> np.ndarray:
    """Per-node |E| (V/m) from edge voltages, shape ``(nx+1, ny+1, nz+1)``.

    Each axis component is the mean of voltage/length over the node's
    incident conductive edges of that axis (one or two); nodes without a
    conductive edge along an axis get a zero component, which keeps
    free-space edge values out of body-surface nodes.
    """
    voltages = np.asarray(voltages, dtype=np.float64)
    if voltages.shape != (grid.n_edges,):
        raise ValueError(f"edge voltages have length {voltages.size}, expected {grid.n_edges}")
    conductance = edge_conductance(model, grid, frequency_hz)
    e_blocks = grid.edge_blocks(voltages)
    m_blocks = grid.edge_blocks((conductance > 0.0).astype(np.float64))
    total = np.zeros(grid.node_dims, dtype=np.float64)
    for axis in range(3):
        ev = e_blocks[axis] * m_blocks[axis] / grid.spacing[axis]
        num = np.zeros(grid.node_dims, dtype=np.float64)
        cnt = np.zeros(grid.node_dims, dtype=np.float64)
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        num[tuple(lo)] += ev
        num[tuple(hi)] += ev
        cnt[tuple(lo)] += m_blocks[axis]
        cnt[tuple(hi)] += m_blocks[axis]
        comp = num / np.maximum(cnt, 1.0)
        comp[cnt == 0.0] = 0.0
        total += comp * comp
    return np.sqrt(total)


def voxel_average(
    node_field: np.ndarray,
    grid: StaggeredGrid,
    model: VoxelModel,
    frequency_hz: float,
):
    """Voxel-averaged |E| over conductive voxels.

    Returns ``(values, linear_indices)``: the eight-corner mean per
    conductive voxel and the x-fastest voxel indices they belong to.
    """
    node_field = np.asarray(node_field, dtype=np.float64).reshape(grid.node_dims)
    mean = corner_mean(node_field)
    mask = model.conductive_mask(frequency_hz)
    flat_mask = mask.ravel(order="F")
    indices = np.flatnonzero(flat_mask)
    return mean.ravel(order="F")[indices], indices


def corner_mean(node_field: np.ndarray) -> np.ndarray:
    """Eight-corner mean of a node array, one value per voxel."""
    acc = np.zeros(tuple(n - 1 for n in node_field.shape), dtype=np.float64)
    for di in (0, 1):
        for dj in (0, 1):
            for dk in (0, 1):
                acc += node_field[
                    di:di + acc.shape[0], dj:dj + acc.shape[1], dk:dk + acc.shape[2]
                ]
    return acc * 0.125


def percentile99(values: np.ndarray) -> float:
    """Nearest-rank 99th percentile: sorted element at index ceil(0.99 n) - 1."""
    values = np.asarray(values)
    n = values.size
    if n == 0:
        raise ValueError("percentile of an empty array")
    rank = -((-99 * n) // 100)  # ceil(0.99 * n) in exact integer arithmetic
    idx = rank - 1
    return float(np.partition(values, idx)[idx])


def scale_reference_field(e, frequency_hz: float, ref_frequency_hz: float,
                          kappa: float, ref_kappa: float):
    """Rescale a reference field to another frequency.

    Multiplies by (f / f_ref) * (kappa(f_ref) / kappa(f)); works elementwise
    on arrays.
    """
    for name, v in (
        ("frequency_hz", frequency_hz),
        ("ref_frequency_hz", ref_frequency_hz),
        ("kappa", kappa),
        ("ref_kappa", ref_kappa),
    ):
        if not float(v) > 0.0:
            raise ValueError(f"{name} must be positive, got {v}")
    factor = (frequency_hz / ref_frequency_hz) * (ref_kappa / kappa)
    return e * factor


@dataclass(frozen=True)
class TissueStats:
    name: str
    count: int
    mean: float
    max: float
    p99: float


@dataclass
class ExposureReport:
    """Voxel-averaged |E| statistics over the conductive voxels."""

    frequency_hz: float
    voxel_field: np.ndarray     # V/m per conductive voxel
    voxel_indices: np.ndarray   # x-fastest voxel linear indices
    percentile99_vpm: float
    max_vpm: float
    per_tissue: dict            # tissue ID -> TissueStats
    dof_count: int
    solver: SolveReport | None = None
    rms: bool = False
    rel_tol: float | None = None
    extra: dict = dataclass_field(default_factory=dict)

    @property
    def n_voxels(self) -> int:
        return int(self.voxel_field.size)


@dataclass(frozen=True)
class LimitCheck:
    passed: bool
    margin: float


def check_limits(report: ExposureReport, limit_vpm: float) -> LimitCheck:
    """Compare the 99th percentile against a basic-restriction limit (inclusive)."""
    if not limit_vpm > 0.0:
        raise ValueError("limit must be positive")
    p99 = report.percentile99_vpm
    if p99 == 0.0:
        return LimitCheck(True, math.inf)
    return LimitCheck(p99 <= limit_vpm, limit_vpm / p99)


def build_exposure_report(
    voxel_values: np.ndarray,
    voxel_indices: np.ndarray,
    model: VoxelModel,
    frequency_hz: float,
    *,
    dof_count: int,
    solver: SolveReport | None = None,
    rms: bool = False,
    rel_tol: float | None = None,
) -> ExposureReport:
    values = np.asarray(voxel_values, dtype=np.float64)
    if rms:
        values = values * RMS_FACTOR
    ids = model.tissue_ids.ravel(order="F")[voxel_indices]
    per_tissue = {}
    for tid in np.unique(ids):
        tid = int(tid)
        if tid == FREE_SPACE_ID:
            continue
        sel = values[ids == tid]
        per_tissue[tid] = TissueStats(
            name=model.tissue_table[tid].name,
            count=int(sel.size),
            mean=float(sel.mean()),
            max=float(sel.max()),
            p99=percentile99(sel),
        )
    return ExposureReport(
        frequency_hz=float(frequency_hz),
        voxel_field=values,
        voxel_indices=np.asarray(voxel_indices),
        percentile99_vpm=percentile99(values) if values.size else 0.0,
        max_vpm=float(values.max()) if values.size else 0.0,
        per_tissue=per_tissue,
        dof_count=int(dof_count),
        solver=solver,
        rms=rms,
        rel_tol=rel_tol,
    )


# ---------------------------------------------------------------------------
# Report and field-dump files
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_report(report: ExposureReport, path) -> None:
    lines = [
        f"p99_vpm = {_fmt(report.percentile99_vpm)}",
        f"max_vpm = {_fmt(report.max_vpm)}",
        f"n_voxels = {report.n_voxels}",
        f"frequency_hz = {_fmt(report.frequency_hz)}",
        f"solver_iterations = {report.solver.iterations if report.solver else 0}",
        f"solve_seconds = {_fmt(report.solver.solve_seconds if report.solver else 0.0)}",
        f"setup_seconds = {_fmt(report.solver.setup_seconds if report.solver else 0.0)}",
        f"dof_count = {report.dof_count}",
        f"rms = {int(report.rms)}",
    ]
    if report.rel_tol is not None:
        lines.append(f"rel_tol = {_fmt(report.rel_tol)}")
    for key, value in report.extra.items():
        lines.append(f"{key} = {value}")
    for tid in sorted(report.per_tissue):
        t = report.per_tissue[tid]
        lines.append(
            f"tissue {tid} {t.name} {t.count} {_fmt(t.mean)} {_fmt(t.max)} {_fmt(t.p99)}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path) -> dict:
    """Parse a report file into {key: str value} plus a 'tissue' list."""
    out: dict = {"tissue": []}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("tissue "):
            out["tissue"].append(line.split()[1:])
        else:
            key, _, value = line.partition(" = ")
            out[key.strip()] = value.strip()
    return out


def write_field_dump(
    model: VoxelModel,
    voxel_values: np.ndarray,
    voxel_indices: np.ndarray,
    path,
) -> None:
    """Full-grid voxel |E| dump: phantom header, f64 payload, NaN in free space."""
    full = np.full(model.n_voxels, np.nan, dtype=np.float64)
    full[voxel_indices] = voxel_values
    Path(path).write_bytes(encode_header(model) + full.astype("<f8").tobytes())


@dataclass(frozen=True)
class FieldDump:
    dims: tuple
    spacing: tuple
    origin: tuple
    values: np.ndarray  # (nx, ny, nz), NaN in free space


def load_field_dump(path) -> FieldDump:
    dims, spacing, origin, _, payload = parse_header(Path(path).read_bytes(), str(path))
    n = dims[0] * dims[1] * dims[2]
    if len(payload) != 8 * n:
        raise PhantomFormatError(
            f"payload size mismatch: expected {8 * n} bytes, got {len(payload)}"
        )
    values = np.frombuffer(payload, dtype="<f8").reshape(dims, order="F")
    return FieldDump(dims, spacing, origin, values)
