"""File formats: XYZ text point clouds, LAS 1.2 readers, flat-binary rasters.

All inputs are expected in one shared projected CRS in meters; no
reprojection is done anywhere. XYZ files declare CRS and units in '#'
header lines, and mixing files with different CRS declarations is a
load-time error (checked by ``require_same_crs``).

Output writers are deterministic: fixed float formats, sorted JSON keys,
no timestamps.
"""

from __future__ import annotations

import hashlib
import json
import struct
import warnings
from pathlib import Path
from typing import Optional

import numpy as np

from .core import CLASS_GROUND, CLASS_NON_GROUND, PointCloud, Raster
from .errors import CrsMismatch, EmptyInput, FormatError


# ---------------------------------------------------------------------------
# XYZ text format
# ---------------------------------------------------------------------------

def load_xyz(path) -> tuple[PointCloud, Optional[str]]:
    """Read a whitespace-separated XYZ file.

    Columns are x y z [class] [segment]; lines starting with '#' are
    headers. A ``# units:`` header other than meters is rejected. Returns
    the cloud and the declared CRS (None if the file does not declare one).
    """
    path = Path(path)
    crs: Optional[str] = None
    units: Optional[str] = None
    n_header = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            stripped = line.strip()
            if not stripped.startswith("#"):
                break
            n_header += 1
            body = stripped.lstrip("#").strip()
            if body.lower().startswith("crs:"):
                crs = body[4:].strip()
            elif body.lower().startswith("units:"):
                units = body[6:].strip().lower()
    if units is not None and units not in ("m", "meter", "meters", "metre", "metres"):
        raise FormatError(f"{path.name}: units must be meters, got {units!r}")

    try:
        with warnings.catch_warnings():
            # empty input is reported via EmptyInput below, not a warning
            warnings.simplefilter("ignore", UserWarning)
            data = np.loadtxt(path, dtype=np.float64, comments="#", ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path.name}: malformed XYZ data ({exc})") from None
    if data.size == 0:
        raise EmptyInput(f"{path.name}: no points")
    if data.shape[1] < 3 or data.shape[1] > 5:
        raise FormatError(
            f"{path.name}: expected 3-5 columns (x y z [class] [segment]), got {data.shape[1]}"
        )
    class_label = None
    segment_id = None
    if data.shape[1] >= 4:
        class_label = data[:, 3].astype(np.uint8)
    if data.shape[1] == 5:
        segment_id = data[:, 4].astype(np.int32)
    return PointCloud(data[:, :3], class_label, segment_id), crs


def save_xyz(path, cloud: PointCloud, crs: Optional[str] = None) -> None:
    """Write a point cloud as XYZ text with CRS/units headers.

    Coordinates use 6 decimals (sub-millimeter); label columns are written
    only when present on the cloud.
    """
    path = Path(path)
    columns = [cloud.points]
    fmt = ["%.6f", "%.6f", "%.6f"]
    if cloud.class_label is not None:
        columns.append(cloud.class_label[:, np.newaxis].astype(np.float64))
        fmt.append("%d")
    if cloud.segment_id is not None:
        if cloud.class_label is None:
            # Keep column positions fixed: segment ids imply a class column.
            columns.insert(1, np.full((len(cloud), 1), CLASS_NON_GROUND, dtype=np.float64))
            fmt.append("%d")
        columns.append(cloud.segment_id[:, np.newaxis].astype(np.float64))
        fmt.append("%d")
    header = f"crs: {crs if crs else 'unspecified'}\nunits: m"
    np.savetxt(path, np.hstack(columns), fmt=" ".join(fmt), header=header, comments="# ")


def require_same_crs(*declared: Optional[str]) -> Optional[str]:
    """Check that all declared CRS strings agree; returns the common one.

    Files without a declaration (None) are compatible with anything.
    """
    seen = {c for c in declared if c is not None}
    if len(seen) > 1:
        raise CrsMismatch(f"inputs declare different CRS: {sorted(seen)}")
    return seen.pop() if seen else None


# ---------------------------------------------------------------------------
# LAS 1.2, point format 0
# ---------------------------------------------------------------------------

_LAS_POINT0 = np.dtype(
    [
        ("x", "<i4"),
        ("y", "<i4"),
        ("z", "<i4"),
        ("intensity", "<u2"),
        ("flags", "u1"),
        ("classification", "u1"),
        ("scan_angle", "i1"),
        ("user_data", "u1"),
        ("point_source", "<u2"),
    ]
)


def load_las(path) -> PointCloud:
    """Read an LAS 1.x file with point format 0 (x, y, z, classification).

    Only the subset needed here is supported: little-endian, point format 0,
    20-byte records. Classification uses the lower 5 bits; LAS code 2
    (ground) maps to the ground label, everything else to non-ground.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 227:
        raise FormatError(f"{path.name}: file too small for an LAS header")
    if raw[:4] != b"LASF":
        raise FormatError(f"{path.name}: missing LASF signature")
    ver_major, ver_minor = raw[24], raw[25]
    if ver_major != 1:
        raise FormatError(f"{path.name}: unsupported LAS version {ver_major}.{ver_minor}")
    (offset_to_points,) = struct.unpack_from("<I", raw, 96)
    point_format = raw[104]
    (record_len,) = struct.unpack_from("<H", raw, 105)
    (n_points,) = struct.unpack_from("<I", raw, 107)
    if point_format != 0:
        raise FormatError(f"{path.name}: only point format 0 is supported, got {point_format}")
    if record_len < _LAS_POINT0.itemsize:
        raise FormatError(f"{path.name}: point record length {record_len} too small")
    scale = struct.unpack_from("<3d", raw, 131)
    offset = struct.unpack_from("<3d", raw, 155)
    if n_points == 0:
        raise EmptyInput(f"{path.name}: no point records")
    end = offset_to_points + n_points * record_len
    if end > len(raw):
        raise FormatError(f"{path.name}: truncated point data")

    body = np.frombuffer(raw, dtype=np.uint8, count=n_points * record_len, offset=offset_to_points)
    records = body.reshape(n_points, record_len)[:, : _LAS_POINT0.itemsize]
    records = np.ascontiguousarray(records).view(_LAS_POINT0).reshape(n_points)

    points = np.empty((n_points, 3), dtype=np.float64)
    points[:, 0] = records["x"] * scale[0] + offset[0]
    points[:, 1] = records["y"] * scale[1] + offset[1]
    points[:, 2] = records["z"] * scale[2] + offset[2]
    las_class = records["classification"] & 0x1F
    class_label = np.where(las_class == 2, CLASS_GROUND, CLASS_NON_GROUND).astype(np.uint8)
    return PointCloud(points, class_label=class_label)


def save_las(path, cloud: PointCloud, scale: float = 0.001) -> None:
    """Write a minimal LAS 1.2 point-format-0 file (testing convenience)."""
    path = Path(path)
    n = len(cloud)
    if n == 0:
        raise EmptyInput("cannot write an empty LAS file")
    offset = cloud.points.min(axis=0)
    header = bytearray(227)
    header[:4] = b"LASF"
    header[24] = 1
    header[25] = 2
    struct.pack_into("<H", header, 94, 227)  # header size
    struct.pack_into("<I", header, 96, 227)  # offset to point data
    struct.pack_into("<I", header, 100, 0)  # number of VLRs
    header[104] = 0  # point data format
    struct.pack_into("<H", header, 105, _LAS_POINT0.itemsize)
    struct.pack_into("<I", header, 107, n)
    struct.pack_into("<3d", header, 131, scale, scale, scale)
    struct.pack_into("<3d", header, 155, *offset)
    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    struct.pack_into("<6d", header, 179, hi[0], lo[0], hi[1], lo[1], hi[2], lo[2])

    records = np.zeros(n, dtype=_LAS_POINT0)
    scaled = np.rint((cloud.points - offset) / scale).astype(np.int64)
    if np.any(np.abs(scaled) > np.iinfo(np.int32).max):
        raise FormatError("coordinates overflow the LAS integer range at this scale")
    records["x"], records["y"], records["z"] = scaled[:, 0], scaled[:, 1], scaled[:, 2]
    if cloud.class_label is not None:
        las_class = np.where(cloud.class_label == CLASS_GROUND, 2, 1).astype(np.uint8)
        records["classification"] = las_class
    with open(path, "wb") as fh:
        fh.write(bytes(header))
        fh.write(records.tobytes())


# ---------------------------------------------------------------------------
# Flat-binary rasters with a JSON sidecar
# ---------------------------------------------------------------------------

def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json") if path.suffix != ".json" else path


def save_raster(path, raster: Raster) -> None:
    """Write raster bands as flat binary plus a JSON sidecar.

    The binary file holds the bands array in C order, band-major
    (band, row, col); the sidecar records georeferencing and dtype.
    """
    path = Path(path)
    meta = {
        "origin": [raster.origin[0], raster.origin[1]],
        "cell_size": raster.cell_size,
        "width": raster.width,
        "height": raster.height,
        "bands": raster.n_bands,
        "nodata": raster.nodata,
        "dtype": raster.bands.dtype.name,
    }
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(raster.bands).tobytes())
    write_json(_sidecar_path(path), meta)


def load_raster(path) -> Raster:
    """Read a raster written by save_raster (or an equivalent sidecar pair)."""
    path = Path(path)
    sidecar = _sidecar_path(path)
    if path.suffix == ".json":
        raise FormatError("pass the binary raster path, not the sidecar")
    try:
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError(f"{path.name}: missing raster sidecar {sidecar.name}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{sidecar.name}: invalid JSON ({exc})") from None
    for key in ("origin", "cell_size", "width", "height", "bands", "dtype"):
        if key not in meta:
            raise FormatError(f"{sidecar.name}: sidecar missing field {key!r}")
    dtype = np.dtype(meta["dtype"])
    expected = meta["bands"] * meta["height"] * meta["width"]
    data = np.fromfile(path, dtype=dtype)
    if data.size != expected:
        raise FormatError(
            f"{path.name}: expected {expected} values "
            f"({meta['bands']}x{meta['height']}x{meta['width']}), found {data.size}"
        )
    bands = data.reshape(meta["bands"], meta["height"], meta["width"])
    return Raster(
        origin=(meta["origin"][0], meta["origin"][1]),
        cell_size=float(meta["cell_size"]),
        bands=bands,
        nodata=meta.get("nodata"),
    )


def read_world_file(path) -> tuple[tuple[float, float], float]:
    """Parse a 6-line ASCII world file; returns (upper-left corner, cell size).

    World files locate the *center* of the upper-left pixel; the returned
    origin is shifted by half a cell to the corner convention used here.
    Rotation terms must be zero and pixels must be square.
    """
    lines = Path(path).read_text(encoding="utf-8").split()
    if len(lines) != 6:
        raise FormatError("world file must contain exactly 6 numbers")
    try:
        a, d, b, e, c, f = (float(v) for v in lines)
    except ValueError:
        raise FormatError("world file contains non-numeric values") from None
    if d != 0.0 or b != 0.0:
        raise FormatError("rotated rasters are not supported (world-file D/B must be 0)")
    if a <= 0 or e >= 0:
        raise FormatError("world file must have positive x step and negative y step")
    if abs(a + e) > 1e-9 * max(a, -e):
        raise FormatError("non-square pixels are not supported")
    return (c - a / 2.0, f - e / 2.0), a


# ---------------------------------------------------------------------------
# Deterministic JSON + hashing helpers
# ---------------------------------------------------------------------------

def write_json(path, obj) -> None:
    """Write JSON with sorted keys and a trailing newline (byte-stable)."""
    text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
