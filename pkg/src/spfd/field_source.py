"""Magnetic flux density sources and their deposition onto fine-grid faces.

Sources are either synthetic (polygonized circular coil via Biot-Savart, or
a uniform field) or a coarse lattice of sampled values read from file.  Face
fluxes are obtained by trilinear interpolation (linear extrapolation outside
the lattice) of the flux density at each face center times the face area;
midpoint quadrature is exact for fields trilinear over a face.  Fluxes that
violate discrete solenoidality are repaired by an l2-minimal projection.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    FieldFormatError,
    LatticeError,
    ProjectionError,
    SingularPointError,
)
from .fit_operators import StaggeredGrid, build_divergence
from .linsolve import SolveConfig, amg_setup, fgmres_solve

MU_0 = 4e-7 * np.pi  # vacuum permeability (T*m/A)

_WIRE_EPS = 1e-12  # evaluation closer than this to a wire segment is singular


@dataclass(frozen=True)
class Lattice:
    """Regular Cartesian sampling lattice (origin, spacing, point counts)."""

    origin: tuple
    spacing: tuple
    dims: tuple

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if any(n < 1 for n in dims):
            raise ValueError(f"lattice dims must be >= 1, got {dims}")
        if any(not s > 0.0 for s in spacing):
            raise ValueError(f"lattice spacing must be positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def n_points(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def points(self) -> np.ndarray:
        """All lattice points, x-fastest, shape (n_points, 3)."""
        axes = [
            self.origin[a] + np.arange(self.dims[a]) * self.spacing[a] for a in range(3)
        ]
        i, j, k = np.meshgrid(axes[0], axes[1], axes[2], indexing="ij")
        return np.stack(
            [i.ravel(order="F"), j.ravel(order="F"), k.ravel(order="F")], axis=1
        )

    @classmethod
    def covering(cls, grid: StaggeredGrid, dims=(2, 2, 2)) -> "Lattice":
        """Lattice spanning the grid bounding box with the given point counts."""
        dims = tuple(int(n) for n in dims)
        extent = [grid.dims[a] * grid.spacing[a] for a in range(3)]
        spacing = tuple(
            extent[a] / (dims[a] - 1) if dims[a] > 1 else max(extent[a], 1.0)
            for a in range(3)
        )
        return cls(grid.origin, spacing, dims)


@dataclass(frozen=True)
class FieldSampleSet:
    """Single-phase flux density amplitudes sampled on a regular lattice."""

    frequency_hz: float
    lattice: Lattice
    positions: np.ndarray  # (n, 3) meters
    b: np.ndarray          # (n, 3) tesla

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        n = self.lattice.n_points
        if pos.shape != (n, 3) or b.shape != (n, 3):
            raise LatticeError(
                f"sample count mismatch: lattice has {n} points, "
                f"got {pos.shape[0]} positions / {b.shape[0]} values"
            )
        if not float(self.frequency_hz) > 0.0:
            raise ValueError("frequency must be positive")
        expected = self.lattice.points()
        if pos.size and np.max(np.abs(pos - expected)) > 1e-9:
            raise LatticeError("sample positions do not lie on the declared lattice")
        pos.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "frequency_hz", float(self.frequency_hz))

    def component_grid(self, comp: int) -> np.ndarray:
        return self.b[:, comp].reshape(self.lattice.dims, order="F")


@dataclass(frozen=True)
class CoilSpec:
    """Circular loop approximated by straight segments, driven by a current amplitude."""

    center: tuple
    axis: tuple
    radius_m: float
    current_a: float
    segments: int = 256

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        axis = np.asarray(self.axis, dtype=np.float64)
        norm = float(np.linalg.norm(axis))
        if norm == 0.0:
            raise ValueError("coil axis must be a nonzero vector")
        if not self.radius_m > 0.0:
            raise ValueError("coil radius must be positive")
        if self.segments < 8:
            raise ValueError("need at least 8 segments")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "axis", tuple(axis / norm))
        object.__setattr__(self, "radius_m", float(self.radius_m))
        object.__setattr__(self, "current_a", float(self.current_a))
        object.__setattr__(self, "segments", int(self.segments))

    def vertices(self) -> np.ndarray:
        """Closed polygon vertices, shape (segments + 1, 3)."""
        n = np.asarray(self.axis)
        ref = np.array([0.0, 0.0, 1.0])
        if abs(float(n @ ref)) > 0.9:
            ref = np.array([1.0, 0.0, 0.0])
        u = np.cross(n, ref)
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        theta = 2.0 * np.pi * np.arange(self.segments + 1) / self.segments
        return (
            np.asarray(self.center)
            + self.radius_m * (np.cos(theta)[:, None] * u + np.sin(theta)[:, None] * v)
        )


@dataclass(frozen=True)
class UniformField:
    """Spatially constant flux density amplitude."""

    b: tuple

    def __post_init__(self):
        object.__setattr__(self, "b", tuple(float(c) for c in self.b))


def coil_field(coil: CoilSpec, points, chunk: int = 16384) -> np.ndarray:
    """Biot-Savart flux density of the polygonized loop at one or many points.

    Uses the exact finite straight-wire expression per segment.  Raises
    :class:`SingularPointError` when a point lies within 1e-12 m of a wire
    segment.  Accepts shape (3,) or (n, 3); returns the matching shape.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != 3:
        raise ValueError("points must have shape (3,) or (n, 3)")
    verts = coil.vertices()
    p1 = verts[:-1]
    seg = verts[1:] - p1
    seg_len2 = np.einsum("sj,sj->s", seg, seg)
    out = np.empty_like(pts)
    scale = MU_0 * coil.current_a / (4.0 * np.pi)
    for lo in range(0, pts.shape[0], chunk):
        p = pts[lo:lo + chunk]
        a = p[:, None, :] - p1[None, :, :]          # (n, s, 3)
        b = a - seg[None, :, :]
        # distance to each segment for the singularity guard
        t = np.clip(np.einsum("nsj,sj->ns", a, seg) / seg_len2, 0.0, 1.0)
        closest = a - t[:, :, None] * seg[None, :, :]
        dist2 = np.einsum("nsj,nsj->ns", closest, closest)
        if np.min(dist2) < _WIRE_EPS * _WIRE_EPS:
            raise SingularPointError("evaluation point lies on the coil wire")
        la = np.sqrt(np.einsum("nsj,nsj->ns", a, a))
        lb = np.sqrt(np.einsum("nsj,nsj->ns", b, b))
        cross = np.cross(a, b)
        denom = la * lb * ((la + lb) ** 2 - seg_len2[None, :])
        coeff = 2.0 * (la + lb) / denom
        out[lo:lo + chunk] = scale * np.einsum("ns,nsj->nj", coeff, cross)
    return out[0] if single else out


def _evaluate_source(source, points: np.ndarray) -> np.ndarray:
    if isinstance(source, CoilSpec):
        return coil_field(source, points)
    if isinstance(source, UniformField):
        return np.broadcast_to(np.asarray(source.b), (points.shape[0], 3)).copy()
    raise TypeError(f"unsupported field source {type(source).__name__}")


def sample_on_lattice(source, lattice: Lattice, frequency_hz: float) -> FieldSampleSet:
    """Evaluate a synthetic source at every lattice point (x-fastest order)."""
    points = lattice.points()
    return FieldSampleSet(frequency_hz, lattice, points, _evaluate_source(source, points))


# ---------------------------------------------------------------------------
# Interpolation onto faces
# ---------------------------------------------------------------------------

def _axis_interp_params(coords: np.ndarray, origin: float, spacing: float, n: int):
    """Base index and local coordinate per query point along one lattice axis.

    Outside the lattice the boundary cell is used with the local coordinate
    running past [0, 1], i.e. linear extrapolation.  A single-point axis
    supports only queries on that plane.
    """
    u = (coords - origin) / spacing
    if n == 1:
        if np.any(np.abs(coords - origin) > 1e-9):
            raise LatticeError(
                "lattice has a single point along an axis that requires interpolation"
            )
        return np.zeros(coords.shape, dtype=np.int64), np.zeros_like(coords), 0
    i0 = np.clip(np.floor(u).astype(np.int64), 0, n - 2)
    return i0, u - i0, 1

def _trilinear(comp: np.ndarray, lattice: Lattice, xs, ys, zs) -> np.ndarray:
    """Trilinear interpolation of one component on the outer grid xs x ys x zs."""
    ix, tx, sx = _axis_interp_params(xs, lattice.origin[0], lattice.spacing[0], lattice.dims[0])
    iy, ty, sy = _axis_interp_params(ys, lattice.origin[1], lattice.spacing[1], lattice.dims[1])
    iz, tz, sz = _axis_interp_params(zs, lattice.origin[2], lattice.spacing[2], lattice.dims[2])
    out = np.zeros((xs.size, ys.size, zs.size), dtype=np.float64)
    for dx in (0, 1):
        wx = (tx if dx else 1.0 - tx)[:, None, None]
        for dy in (0, 1):
            wy = (ty if dy else 1.0 - ty)[None, :, None]
            for dz in (0, 1):
                wz = (tz if dz else 1.0 - tz)[None, None, :]
                corner = comp[
                    (ix + dx * sx)[:, None, None],
                    (iy + dy * sy)[None, :, None],
                    (iz + dz * sz)[None, None, :],
                ]
                out += wx * wy * wz * corner
    return out


def interpolate_to_faces(samples: FieldSampleSet, grid: StaggeredGrid) -> np.ndarray:
    """Integrated flux through every grid face (weber), midpoint quadrature.

    For each face, the trilinearly interpolated/extrapolated flux density at
    the face center is dotted with the face normal and multiplied by the
    face area.
    """
    fluxes = np.empty(grid.n_faces, dtype=np.float64)
    for axis in range(3):
        comp = samples.component_grid(axis)
        xs, ys, zs = grid.face_center_axes(axis)
        vals = _trilinear(comp, samples.lattice, xs, ys, zs)
        lo = grid.face_offsets[axis]
        fluxes[lo:lo + grid.face_counts[axis]] = (
            vals * grid.face_area(axis)
        ).ravel(order="F")
    return fluxes


def face_fluxes_from_callable(grid: StaggeredGrid, fn) -> np.ndarray:
    """Face fluxes from a direct field evaluation ``fn(points (n,3)) -> (n,3)``."""
    fluxes = np.empty(grid.n_faces, dtype=np.float64)
    for axis in range(3):
        xs, ys, zs = grid.face_center_axes(axis)
        i, j, k = np.meshgrid(xs, ys, zs, indexing="ij")
        pts = np.stack([i.ravel(order="F"), j.ravel(order="F"), k.ravel(order="F")], axis=1)
        vals = fn(pts)[:, axis]
        lo = grid.face_offsets[axis]
        fluxes[lo:lo + grid.face_counts[axis]] = vals * grid.face_area(axis)
    return fluxes


# ---------------------------------------------------------------------------
# Divergence cleaning
# ---------------------------------------------------------------------------

def divergence_clean(
    fluxes: np.ndarray,
    grid: StaggeredGrid,
    tol: float = 1e-10,
    cfg: SolveConfig | None = None,
) -> np.ndarray:
    """Project face fluxes onto the discretely solenoidal subspace.

    Returns the input unchanged when the relative cell-outflux norm is
    already below ``tol``; otherwise subtracts the l2-minimal correction
    (a pure face-gradient field) and verifies the postcondition.
    """
    fluxes = np.asarray(fluxes, dtype=np.float64)
    flux_norm = float(np.linalg.norm(fluxes))
    if flux_norm == 0.0:
        return fluxes
    div = build_divergence(grid)
    defect = div @ fluxes
    rel = float(np.linalg.norm(defect)) / flux_norm
    if rel <= tol:
        return fluxes

    normal = (div @ div.T).tocsr()
    cfg = cfg or SolveConfig()
    cfg = replace(cfg, rel_tol=min(1e-12, 0.25 * tol / rel))
    hierarchy = amg_setup(normal, cfg)
    phi, rep = fgmres_solve(normal, defect, hierarchy, cfg)
    if not rep.converged:
        raise ProjectionError(
            f"divergence projection did not converge (residual {rep.rel_residual:.3e})"
        )
    cleaned = fluxes - div.T @ phi
    rel_after = float(np.linalg.norm(div @ cleaned)) / flux_norm
    if rel_after > tol:
        raise ProjectionError(
            f"divergence cleaning left relative defect {rel_after:.3e} > {tol:.3e}"
        )
    return cleaned


# ---------------------------------------------------------------------------
# Sample file format
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def save_samples(samples: FieldSampleSet, path) -> None:
    """Write the canonical sample file: four header lines then one line per sample."""
    lat = samples.lattice
    lines = [
        f"frequency_hz = {_fmt(samples.frequency_hz)}",
        "lattice_dims = {} {} {}".format(*lat.dims),
        "lattice_origin_m = {} {} {}".format(*(_fmt(v) for v in lat.origin)),
        "lattice_spacing_m = {} {} {}".format(*(_fmt(v) for v in lat.spacing)),
    ]
    for p, b in zip(samples.positions, samples.b):
        lines.append(" ".join(_fmt(v) for v in (*p, *b)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_samples(path) -> FieldSampleSet:
    text = Path(path).read_text(encoding="utf-8")
    header: dict = {}
    rows = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if " = " in line:
            key, _, value = line.partition(" = ")
            key = key.strip()
            if key in header:
                raise FieldFormatError(f"duplicate header key '{key}'")
            header[key] = value
            continue
        parts = line.split()
        if len(parts) != 6:
            raise FieldFormatError(f"bad sample line: {raw!r}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise FieldFormatError(f"bad sample line: {raw!r}") from None
    for key in ("frequency_hz", "lattice_dims", "lattice_origin_m", "lattice_spacing_m"):
        if key not in header:
            raise FieldFormatError(f"missing header key '{key}'")
    try:
        freq = float(header["frequency_hz"])
        dims = tuple(int(v) for v in header["lattice_dims"].split())
        origin = tuple(float(v) for v in header["lattice_origin_m"].split())
        spacing = tuple(float(v) for v in header["lattice_spacing_m"].split())
        if len(dims) != 3 or len(origin) != 3 or len(spacing) != 3:
            raise ValueError
    except ValueError:
        raise FieldFormatError("malformed lattice header") from None
    lattice = Lattice(origin, spacing, dims)
    if len(rows) != lattice.n_points:
        raise FieldFormatError(
            f"sample count mismatch: header implies {lattice.n_points}, got {len(rows)}"
        )
    data = np.asarray(rows, dtype=np.float64).reshape(-1, 6)
    try:
        return FieldSampleSet(freq, lattice, data[:, :3], data[:, 3:])
    except LatticeError as exc:
        raise FieldFormatError(str(exc)) from None
