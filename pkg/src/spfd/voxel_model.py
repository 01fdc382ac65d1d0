"""Voxel body models with frequency-dependent tissue conductivities.

Conventions used throughout the package:

* voxel counts ``dims = (nx, ny, nz)``, voxel (i, j, k) spans
  ``origin + (i*dx, j*dy, k*dz) .. origin + ((i+1)*dx, ...)``
* linear indices are x-fastest: ``i + nx*(j + ny*k)``; 3-d arrays of shape
  ``(nx, ny, nz)`` are flattened/restored with ``order="F"``
* tissue ID 0 is reserved for free space and must have zero conductivity
"""

from __future__ import annotations

from dataclasses import dataclass
from math import exp, log
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import GeometryError, PhantomFormatError, UnknownTissueError

FREE_SPACE_ID = 0

_HEADER_END = b"END_HEADER\n"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ConductivitySamples:
    """Sampled conductivity curve kappa(f), strictly increasing in frequency."""

    frequencies_hz: np.ndarray
    kappas_spm: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frequencies_hz, dtype=np.float64)
        k = np.asarray(self.kappas_spm, dtype=np.float64)
        if f.ndim != 1 or f.size == 0 or k.shape != f.shape:
            raise ValueError("need at least one (frequency, kappa) sample")
        if not np.all(np.isfinite(f)) or not np.all(f > 0.0):
            raise ValueError("sample frequencies must be finite and positive")
        if np.any(np.diff(f) <= 0.0):
            raise ValueError("sample frequencies must be strictly increasing")
        if not np.all(np.isfinite(k)) or np.any(k < 0.0):
            raise ValueError("conductivities must be finite and >= 0")
        f.flags.writeable = False
        k.flags.writeable = False
        object.__setattr__(self, "frequencies_hz", f)
        object.__setattr__(self, "kappas_spm", k)

    @classmethod
    def from_pairs(cls, pairs) -> "ConductivitySamples":
        arr = np.asarray(list(pairs), dtype=np.float64).reshape(-1, 2)
        return cls(arr[:, 0].copy(), arr[:, 1].copy())

    @classmethod
    def constant(cls, kappa: float, frequency_hz: float = 1e3) -> "ConductivitySamples":
        return cls(np.array([frequency_hz]), np.array([float(kappa)]))

    def at(self, frequency_hz: float) -> float:
        """Evaluate kappa at a frequency.

        Piecewise linear in (log f, log kappa) between bracketing samples,
        clamped to the nearest sample outside the sampled range, and exact at
        the sample frequencies.  When a bracketing kappa is zero the log is
        undefined and the segment degrades to linear in log f, which keeps
        the exact-at-samples and monotonicity guarantees.
        """
        f = float(frequency_hz)
        if not f > 0.0:
            raise ValueError("frequency must be positive")
        freqs = self.frequencies_hz
        kappas = self.kappas_spm
        j = int(np.searchsorted(freqs, f))
        if j < freqs.size and freqs[j] == f:
            return float(kappas[j])
        if f < freqs[0]:
            return float(kappas[0])
        if f > freqs[-1]:
            return float(kappas[-1])
        k0, k1 = float(kappas[j - 1]), float(kappas[j])
        t = (log(f) - log(freqs[j - 1])) / (log(freqs[j]) - log(freqs[j - 1]))
        if k0 > 0.0 and k1 > 0.0:
            return exp((1.0 - t) * log(k0) + t * log(k1))
        return (1.0 - t) * k0 + t * k1


@dataclass(frozen=True)
class Tissue:
    name: str
    conductivity: ConductivitySamples

    def __post_init__(self):
        if not self.name or any(c.isspace() for c in self.name):
            raise ValueError(f"tissue name must be non-empty without whitespace: {self.name!r}")


@dataclass(frozen=True)
class VoxelModel:
    """Uniform Cartesian tissue-ID grid with a conductivity table.

    Immutable after construction; safe for concurrent reads.
    """

    dims: tuple
    spacing: tuple
    origin: tuple
    tissue_ids: np.ndarray
    tissue_table: dict

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(dims) != 3 or any(n < 1 for n in dims):
            raise ValueError(f"dims must be three integers >= 1, got {dims}")
        if len(spacing) != 3 or any(not s > 0.0 for s in spacing):
            raise ValueError(f"spacing must be three positive reals, got {spacing}")
        ids = np.asarray(self.tissue_ids)
        if ids.dtype != np.uint16:
            ids = ids.astype(np.uint16)
        if ids.shape != dims:
            ids = ids.reshape(dims, order="F")
        present = np.unique(ids)
        for tid in present:
            if int(tid) not in self.tissue_table:
                raise PhantomFormatError(f"tissue ID {int(tid)} has no table entry")
        if FREE_SPACE_ID in self.tissue_table:
            fs = self.tissue_table[FREE_SPACE_ID]
            if np.any(fs.conductivity.kappas_spm != 0.0):
                raise PhantomFormatError("tissue ID 0 is reserved for free space (kappa == 0)")
        ids = np.ascontiguousarray(ids)
        ids.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "tissue_ids", ids)

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def voxel_centers_1d(self):
        """Per-axis voxel center coordinates (three 1-d arrays)."""
        return tuple(
            self.origin[a] + (np.arange(self.dims[a]) + 0.5) * self.spacing[a]
            for a in range(3)
        )

    def voxel_kappa(self, frequency_hz: float) -> np.ndarray:
        """Per-voxel conductivity at a frequency, shape ``dims``."""
        lut = np.zeros(int(self.tissue_ids.max()) + 1, dtype=np.float64)
        for tid, tissue in self.tissue_table.items():
            if tid < lut.size:
                lut[tid] = tissue.conductivity.at(frequency_hz)
        return lut[self.tissue_ids]

    def conductive_mask(self, frequency_hz: float) -> np.ndarray:
        return self.voxel_kappa(frequency_hz) > 0.0


def kappa_at(model: VoxelModel, tissue_id: int, frequency_hz: float) -> float:
    """Conductivity of one tissue at a frequency (S/m)."""
    try:
        tissue = model.tissue_table[int(tissue_id)]
    except KeyError:
        raise UnknownTissueError(f"unknown tissue ID {tissue_id}") from None
    return tissue.conductivity.at(frequency_hz)


# ---------------------------------------------------------------------------
# Phantom file format
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def encode_header(model: VoxelModel) -> bytes:
    """Canonical phantom header bytes, END_HEADER marker included."""
    lines = [
        f"format_version = {_FORMAT_VERSION}",
        "dims = {} {} {}".format(*model.dims),
        "spacing_m = {} {} {}".format(*(_fmt(s) for s in model.spacing)),
        "origin_m = {} {} {}".format(*(_fmt(o) for o in model.origin)),
    ]
    for tid in sorted(model.tissue_table):
        t = model.tissue_table[tid]
        pairs = " ".join(
            f"{_fmt(f)}:{_fmt(k)}"
            for f, k in zip(t.conductivity.frequencies_hz, t.conductivity.kappas_spm)
        )
        lines.append(f"tissue = {tid} {t.name} {pairs}".rstrip())
    return ("\n".join(lines) + "\n").encode("utf-8") + _HEADER_END


def save_model(model: VoxelModel, path) -> None:
    """Write the canonical phantom file: text header, END_HEADER, u16 payload."""
    payload = model.tissue_ids.ravel(order="F").astype("<u2").tobytes()
    Path(path).write_bytes(encode_header(model) + payload)


def _parse_triple(value: str, kind, key: str):
    parts = value.split()
    if len(parts) != 3:
        raise PhantomFormatError(f"header key '{key}' needs three values, got {value!r}")
    try:
        return tuple(kind(p) for p in parts)
    except ValueError:
        raise PhantomFormatError(f"bad value for header key '{key}': {value!r}") from None


def _parse_tissue_line(value: str):
    parts = value.split()
    if len(parts) < 2:
        raise PhantomFormatError(f"bad tissue line: {value!r}")
    try:
        tid = int(parts[0])
    except ValueError:
        raise PhantomFormatError(f"bad tissue ID in: {value!r}") from None
    name = parts[1]
    pairs = []
    for tok in parts[2:]:
        try:
            f, _, k = tok.partition(":")
            pairs.append((float(f), float(k)))
        except ValueError:
            raise PhantomFormatError(f"bad conductivity sample {tok!r}") from None
    if not pairs:
        raise PhantomFormatError(f"tissue {tid} has no conductivity samples")
    try:
        samples = ConductivitySamples.from_pairs(pairs)
        return tid, Tissue(name, samples)
    except ValueError as exc:
        raise PhantomFormatError(f"tissue {tid}: {exc}") from None


def parse_header(data: bytes, where: str = "phantom"):
    """Split and validate header bytes.

    Returns ``(dims, spacing, origin, tissue_table, payload_bytes)``.
    """
    end = data.find(_HEADER_END)
    if end < 0:
        raise PhantomFormatError(f"{where}: missing END_HEADER")
    try:
        header = data[:end].decode("utf-8")
    except UnicodeDecodeError:
        raise PhantomFormatError(f"{where}: header is not valid UTF-8") from None
    payload = data[end + len(_HEADER_END):]

    seen: dict = {}
    tissues: dict = {}
    for raw in header.splitlines():
        line = raw.strip()
        if not line:
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise PhantomFormatError(f"malformed header line: {raw!r}")
        key = key.strip()
        if key == "tissue":
            tid, tissue = _parse_tissue_line(value)
            if tid in tissues:
                raise PhantomFormatError(f"duplicate tissue ID {tid}")
            tissues[tid] = tissue
        elif key in ("format_version", "dims", "spacing_m", "origin_m"):
            if key in seen:
                raise PhantomFormatError(f"duplicate header key '{key}'")
            seen[key] = value
        else:
            raise PhantomFormatError(f"unknown header key '{key}'")
    for key in ("format_version", "dims", "spacing_m", "origin_m"):
        if key not in seen:
            raise PhantomFormatError(f"missing header key '{key}'")
    if seen["format_version"].strip() != str(_FORMAT_VERSION):
        raise PhantomFormatError(f"unsupported format_version {seen['format_version']!r}")
    dims = _parse_triple(seen["dims"], int, "dims")
    spacing = _parse_triple(seen["spacing_m"], float, "spacing_m")
    origin = _parse_triple(seen["origin_m"], float, "origin_m")
    return dims, spacing, origin, tissues, payload


def load_model(path) -> VoxelModel:
    """Load a phantom file written by :func:`save_model` (or a compatible tool)."""
    dims, spacing, origin, tissues, payload = parse_header(
        Path(path).read_bytes(), str(path)
    )
    expected = 2 * dims[0] * dims[1] * dims[2]
    if len(payload) != expected:
        raise PhantomFormatError(
            f"payload size mismatch: expected {expected} bytes, got {len(payload)}"
        )
    ids = np.frombuffer(payload, dtype="<u2").reshape(dims, order="F")
    return VoxelModel(dims, spacing, origin, ids, tissues)


# ---------------------------------------------------------------------------
# Synthetic phantoms
# ---------------------------------------------------------------------------

def _as_triple(x):
    arr = np.broadcast_to(np.asarray(x, dtype=np.float64), (3,))
    return tuple(float(v) for v in arr)


def _tissue_table(layer_kappas, names, sample_frequency_hz):
    table = {FREE_SPACE_ID: Tissue("free_space", ConductivitySamples.constant(0.0, sample_frequency_hz))}
    for i, kappa in enumerate(layer_kappas):
        if isinstance(kappa, ConductivitySamples):
            samples = kappa
        else:
            samples = ConductivitySamples.constant(float(kappa), sample_frequency_hz)
        table[i + 1] = Tissue(names[i], samples)
    return table


def make_phantom(
    kind: str,
    dims,
    spacing,
    *,
    origin=(0.0, 0.0, 0.0),
    center_m=None,
    radius_m: float | None = None,
    height_m: float | None = None,
    axis: str = "z",
    size_m=None,
    layers: int = 1,
    kappa_spm=0.2,
    tissue_name: str = "tissue",
    sample_frequency_hz: float = 1e3,
) -> VoxelModel:
    """Generate a deterministic analytic phantom.

    A voxel belongs to the shape iff its center lies strictly inside; inside
    voxels get tissue ID 1 (for ``layered-block``, IDs 1..layers along the
    layer axis), everything else ID 0.  Raises :class:`GeometryError` when
    the shape extends past the grid bounding box.
    """
    dims = tuple(int(n) for n in dims)
    spacing = _as_triple(spacing)
    origin = _as_triple(origin)
    extent = tuple(origin[a] + dims[a] * spacing[a] for a in range(3))
    if center_m is None:
        center_m = tuple(0.5 * (origin[a] + extent[a]) for a in range(3))
    center_m = _as_triple(center_m)
    ax = "xyz".index(axis)

    def check_bounds(lo, hi):
        eps = 1e-12
        for a in range(3):
            if lo[a] < origin[a] - eps or hi[a] > extent[a] + eps:
                raise GeometryError(
                    f"{kind} phantom exceeds grid bounds on axis {'xyz'[a]}: "
                    f"[{lo[a]:g}, {hi[a]:g}] outside [{origin[a]:g}, {extent[a]:g}]"
                )

    xc, yc, zc = (
        origin[a] + (np.arange(dims[a]) + 0.5) * spacing[a] for a in range(3)
    )
    X = xc[:, None, None] - center_m[0]
    Y = yc[None, :, None] - center_m[1]
    Z = zc[None, None, :] - center_m[2]

    kappas = [kappa_spm]
    names = [tissue_name]

    if kind == "sphere":
        if radius_m is None:
            raise ValueError("sphere phantom needs radius_m")
        r = float(radius_m)
        check_bounds([c - r for c in center_m], [c + r for c in center_m])
        inside = X * X + Y * Y + Z * Z < r * r
    elif kind in ("cylinder", "block", "layered-block"):
        if kind == "cylinder":
            if radius_m is None:
                raise ValueError("cylinder phantom needs radius_m")
            r = float(radius_m)
            h = float(height_m) if height_m is not None else extent[ax] - origin[ax]
            half = [r, r, r]
            half[ax] = 0.5 * h
            check_bounds(
                [center_m[a] - half[a] for a in range(3)],
                [center_m[a] + half[a] for a in range(3)],
            )
            axial = (X, Y, Z)[ax]
            trans = [(X, Y, Z)[a] for a in range(3) if a != ax]
            inside = (trans[0] ** 2 + trans[1] ** 2 < r * r) & (np.abs(axial) < 0.5 * h)
        else:
            if size_m is None:
                size_m = tuple(extent[a] - origin[a] for a in range(3))
            size_m = _as_triple(size_m)
            half = [0.5 * s for s in size_m]
            check_bounds(
                [center_m[a] - half[a] for a in range(3)],
                [center_m[a] + half[a] for a in range(3)],
            )
            inside = (np.abs(X) < half[0]) & (np.abs(Y) < half[1]) & (np.abs(Z) < half[2])
            if kind == "layered-block":
                layers = int(layers)
                if np.ndim(kappa_spm) == 0:
                    kappas = [kappa_spm] * layers
                else:
                    kappas = list(kappa_spm)
                    if len(kappas) != layers:
                        raise ValueError("need one kappa per layer")
                names = [f"{tissue_name}_{i + 1}" for i in range(layers)]
                axial = (X, Y, Z)[ax]
                rel = (axial + half[ax]) / (2.0 * half[ax] / layers)
                layer_idx = np.clip(np.floor(rel).astype(np.int64), 0, layers - 1)
                ids = np.where(inside, (layer_idx + 1).astype(np.uint16), np.uint16(0))
                table = _tissue_table(kappas, names, sample_frequency_hz)
                return VoxelModel(dims, spacing, origin, ids, table)
    else:
        raise ValueError(f"unknown phantom kind {kind!r}")

    ids = np.where(inside, np.uint16(1), np.uint16(0))
    table = _tissue_table(kappas, names, sample_frequency_hz)
    return VoxelModel(dims, spacing, origin, ids, table)


# ---------------------------------------------------------------------------
# Conductive connectivity
# ---------------------------------------------------------------------------

def _pad_any4(cond: np.ndarray, axis: int) -> np.ndarray:
    """Edge mask for one orientation: any of the <=4 voxels around the edge."""
    pads = [(0, 0)] * 3
    for a in range(3):
        if a != axis:
            pads[a] = (1, 1)
    p = np.pad(cond, pads, constant_values=False)
    slabs = []
    for da in (0, 1):
        for db in (0, 1):
            sl = [slice(None)] * 3
            t = [a for a in range(3) if a != axis]
            sl[t[0]] = slice(da, p.shape[t[0]] - 1 + da)
            sl[t[1]] = slice(db, p.shape[t[1]] - 1 + db)
            slabs.append(p[tuple(sl)])
    return slabs[0] | slabs[1] | slabs[2] | slabs[3]


def edge_conductive_masks(model: VoxelModel, frequency_hz: float):
    """Boolean conductivity masks for x-, y-, z-oriented edges.

    An edge is conductive iff at least one of the (up to four) voxels sharing
    it has nonzero conductivity at the given frequency.  Shapes are
    ``(nx, ny+1, nz+1)``, ``(nx+1, ny, nz+1)``, ``(nx+1, ny+1, nz)``.
    """
    cond = model.conductive_mask(frequency_hz)
    return tuple(_pad_any4(cond, a) for a in range(3))


def node_conductive_mask(model: VoxelModel, frequency_hz: float) -> np.ndarray:
    """Nodes touching at least one conductive voxel, shape ``(nx+1, ny+1, nz+1)``."""
    p = np.pad(model.conductive_mask(frequency_hz), 1, constant_values=False)
    out = np.zeros(tuple(n + 1 for n in model.dims), dtype=bool)
    for di in (0, 1):
        for dj in (0, 1):
            for dk in (0, 1):
                out |= p[di:di + out.shape[0], dj:dj + out.shape[1], dk:dk + out.shape[2]]
    return out


def conductive_component_labels(model: VoxelModel, frequency_hz: float) -> np.ndarray:
    """Connected-component label per grid node over conductive edges.

    Conductive nodes get labels 0..C-1 (ordered by lowest linear node index),
    all other nodes get -1.  Returned flat, x-fastest, length
    ``(nx+1)*(ny+1)*(nz+1)``.
    """
    nx, ny, nz = model.dims
    nodes = (nx + 1) * (ny + 1) * (nz + 1)
    masks = edge_conductive_masks(model, frequency_hz)

    def node_id(ii, jj, kk):
        return ii + (nx + 1) * (jj + (ny + 1) * kk)

    tails = []
    heads = []
    for axis, m in enumerate(masks):
        I, J, K = np.nonzero(m)
        t = node_id(I, J, K)
        stepped = [I.copy(), J.copy(), K.copy()]
        stepped[axis] = stepped[axis] + 1
        h = node_id(*stepped)
        tails.append(t)
        heads.append(h)
    tails = np.concatenate(tails) if tails else np.empty(0, dtype=np.int64)
    heads = np.concatenate(heads) if heads else np.empty(0, dtype=np.int64)

    ncond = node_conductive_mask(model, frequency_hz).ravel(order="F")
    labels = np.full(nodes, -1, dtype=np.int32)
    if tails.size == 0:
        return labels
    adj = coo_matrix(
        (np.ones(tails.size, dtype=np.int8), (tails, heads)), shape=(nodes, nodes)
    )
    _, raw = connected_components(adj, directed=False)
    kept = raw[ncond]
    # renumber components by first appearance (== lowest linear node index)
    uniq, first = np.unique(kept, return_index=True)
    rank = np.empty(uniq.size, dtype=np.int32)
    rank[np.argsort(first, kind="stable")] = np.arange(uniq.size, dtype=np.int32)
    labels[ncond] = rank[np.searchsorted(uniq, kept)]
    return labels
