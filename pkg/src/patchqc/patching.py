"""Square patch extraction from planar segments via occupancy grids.

Each segment gets a boolean occupancy grid anchored at its bounding-box
minimum corner; a patch footprint is a patch_cells x patch_cells window of
fully occupied cells, so no accepted patch straddles a data gap. Candidate
footprints are scanned row-major and thinned greedily so accepted patches
never share a cell.

Grid rows run in +y from the anchor corner (math convention), unlike
Raster rows which run top-down from an upper-left origin.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Box2D, Plane, PointCloud, Raster, SpatialIndex, fit_plane
from .errors import DegenerateGeometry

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PatchingParams:
    """Occupancy-grid and patch-footprint parameters.

    cell: occupancy cell edge, meters.
    patch_cells: patch edge in cells (4 cells of 0.5 m = a 2 x 2 m patch).
    stride: scan step between candidate origins, cells.
    min_als_points: reference points required to fit a patch plane.
    """

    cell: float = 0.5
    patch_cells: int = 4
    stride: int = 1
    min_als_points: int = 12

    def __post_init__(self):
        if not self.cell > 0:
            raise ValueError("cell must be > 0")
        if self.patch_cells < 1:
            raise ValueError("patch_cells must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.min_als_points < 3:
            raise ValueError("min_als_points must be >= 3 (plane fit needs 3 points)")

    @property
    def patch_size(self) -> float:
        return self.patch_cells * self.cell


@dataclass
class OccupancyGrid:
    """Boolean per-cell occupancy over a segment's 2D bounding box.

    ``origin`` is the bounding-box minimum corner; cell (row, col) covers
    the half-open square [origin_x + col*cell, origin_x + (col+1)*cell) x
    [origin_y + row*cell, origin_y + (row+1)*cell).
    """

    origin: tuple[float, float]
    cell: float
    occupied: np.ndarray  # (height, width) bool

    @property
    def height(self) -> int:
        return self.occupied.shape[0]

    @property
    def width(self) -> int:
        return self.occupied.shape[1]

    def cell_box(self, row: int, col: int, span: int = 1) -> Box2D:
        ox, oy = self.origin
        return Box2D(
            ox + col * self.cell,
            oy + row * self.cell,
            ox + (col + span) * self.cell,
            oy + (row + span) * self.cell,
        )


def build_grid(points, cell: float) -> OccupancyGrid:
    """Occupancy grid over the points' 2D bounding box (>= 1 point per cell)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("build_grid needs a non-empty point array")
    xy = pts[:, :2]
    origin = xy.min(axis=0)
    col = np.floor((xy[:, 0] - origin[0]) / cell).astype(np.int64)
    row = np.floor((xy[:, 1] - origin[1]) / cell).astype(np.int64)
    occupied = np.zeros((int(row.max()) + 1, int(col.max()) + 1), dtype=bool)
    occupied[row, col] = True
    return OccupancyGrid(origin=(float(origin[0]), float(origin[1])), cell=cell, occupied=occupied)


def select_patches(grid: OccupancyGrid, patch_cells: int, stride: int = 1) -> list[tuple[int, int]]:
    """Candidate footprint origins (row, col) with no empty cell, row-major.

    A footprint qualifies iff all patch_cells^2 cells it covers are
    occupied and it lies fully inside the grid.
    """
    ps = patch_cells
    if grid.height < ps or grid.width < ps:
        return []
    # Integral image: window sum == ps^2 means every covered cell is occupied.
    padded = np.zeros((grid.height + 1, grid.width + 1), dtype=np.int64)
    np.cumsum(np.cumsum(grid.occupied, axis=0), axis=1, out=padded[1:, 1:])
    win = padded[ps:, ps:] - padded[:-ps, ps:] - padded[ps:, :-ps] + padded[:-ps, :-ps]
    full = win == ps * ps
    sub = full[::stride, ::stride]
    origins = np.argwhere(sub) * stride  # argwhere is row-major
    return [(int(r), int(c)) for r, c in origins]


def dedupe_patches(
    candidates: list[tuple[int, int]], patch_cells: int, grid: OccupancyGrid
) -> list[tuple[int, int]]:
    """Greedy non-overlap selection in scan order.

    A candidate survives iff its footprint shares no cell with any
    previously accepted footprint, so each grid cell backs at most one
    patch. Idempotent: reapplying to its own output changes nothing.
    """
    claimed = np.zeros((grid.height, grid.width), dtype=bool)
    accepted = []
    ps = patch_cells
    for r, c in candidates:
        window = claimed[r : r + ps, c : c + ps]
        if window.any():
            continue
        window[:] = True
        accepted.append((r, c))
    return accepted


@dataclass(frozen=True)
class Patch:
    """One square evaluation footprint carved from a segment.

    ``plane`` is fitted from the segment's reference points inside
    ``bounds`` only; ``n_als`` is their count. ``als_indices`` (indices
    into the segmented reference cloud) is kept for in-memory analysis and
    is not serialized.
    """

    id: int
    segment_id: int
    bounds: Box2D
    plane: Plane
    n_als: int
    als_indices: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "segment_id": self.segment_id,
            "bounds": [self.bounds.xmin, self.bounds.ymin, self.bounds.xmax, self.bounds.ymax],
            "plane": {
                "normal": [float(v) for v in self.plane.normal],
                "d": self.plane.d,
                "rpf": self.plane.rpf,
                "support": self.plane.support,
            },
            "n_als": self.n_als,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Patch":
        b = data["bounds"]
        p = data["plane"]
        return cls(
            id=int(data["id"]),
            segment_id=int(data["segment_id"]),
            bounds=Box2D(b[0], b[1], b[2], b[3]),
            plane=Plane(
                normal=np.asarray(p["normal"], dtype=np.float64),
                d=float(p["d"]),
                rpf=float(p["rpf"]),
                support=int(p["support"]),
            ),
            n_als=int(data["n_als"]),
        )


def build_patches(cloud: PointCloud, params: PatchingParams = PatchingParams()) -> list[Patch]:
    """Extract disjoint square patches from every segment of the cloud.

    Per segment: occupancy grid, fully-occupied footprints, greedy
    non-overlap thinning, then a reference plane fitted from the segment
    points inside each footprint. Footprints with fewer than
    ``min_als_points`` such points are dropped. Ids are assigned 1..n in
    (segment_id, row-major origin) order and are deterministic.
    """
    if cloud.segment_id is None:
        raise DegenerateGeometry("cloud has no segment ids; run segmentation first")
    patches: list[Patch] = []
    ps = params.patch_cells
    for sid in np.unique(cloud.segment_id):
        if sid == 0:
            continue
        seg_idx = np.flatnonzero(cloud.segment_id == sid)
        seg_pts = cloud.points[seg_idx]
        grid = build_grid(seg_pts, params.cell)
        accepted = dedupe_patches(select_patches(grid, ps, params.stride), ps, grid)
        if not accepted:
            continue
        # Map each accepted footprint's cells to a patch slot, then bin the
        # segment points once to collect per-patch membership.
        slot_grid = np.full((grid.height, grid.width), -1, dtype=np.int64)
        for slot, (r, c) in enumerate(accepted):
            slot_grid[r : r + ps, c : c + ps] = slot
        col = np.floor((seg_pts[:, 0] - grid.origin[0]) / params.cell).astype(np.int64)
        row = np.floor((seg_pts[:, 1] - grid.origin[1]) / params.cell).astype(np.int64)
        slots = slot_grid[row, col]
        for slot, (r, c) in enumerate(accepted):
            members = seg_idx[slots == slot]
            if members.size < params.min_als_points:
                continue
            try:
                plane = fit_plane(cloud.points[members])
            except DegenerateGeometry:
                continue
            patches.append(
                Patch(
                    id=0,  # assigned below once the full list is known
                    segment_id=int(sid),
                    bounds=grid.cell_box(r, c, span=ps),
                    plane=plane,
                    n_als=int(members.size),
                    als_indices=members,
                )
            )
    patches = [
        Patch(
            id=i + 1,
            segment_id=p.segment_id,
            bounds=p.bounds,
            plane=p.plane,
            n_als=p.n_als,
            als_indices=p.als_indices,
        )
        for i, p in enumerate(patches)
    ]
    log.info("patching: %d patches from %d segments",
             len(patches), len({p.segment_id for p in patches}))
    return patches


def extract_dim_points(patch: Patch, dim_index: SpatialIndex) -> np.ndarray:
    """Indices of the evaluated cloud's points inside the patch bounds."""
    return dim_index.box(patch.bounds)


def extract_dsm_cells(patch: Patch, dsm: Raster) -> np.ndarray:
    """Surface-model samples (x, y, z) whose cell center lies in the patch.

    Nodata cells are skipped; rows are emitted in raster scan order.
    """
    b = patch.bounds
    # Candidate row/col ranges bracketing the box, then exact center test.
    col_lo = int(np.floor((b.xmin - dsm.origin[0]) / dsm.cell_size)) - 1
    col_hi = int(np.ceil((b.xmax - dsm.origin[0]) / dsm.cell_size)) + 1
    row_lo = int(np.floor((dsm.origin[1] - b.ymax) / dsm.cell_size)) - 1
    row_hi = int(np.ceil((dsm.origin[1] - b.ymin) / dsm.cell_size)) + 1
    cols = np.arange(max(col_lo, 0), min(col_hi, dsm.width))
    rows = np.arange(max(row_lo, 0), min(row_hi, dsm.height))
    if cols.size == 0 or rows.size == 0:
        return np.empty((0, 3))
    cc, rr = np.meshgrid(cols, rows)
    x, y = dsm.rowcol_to_xy(rr, cc)
    inside = b.contains(x, y)
    z = dsm.bands[0, rr, cc].astype(np.float64)
    if dsm.nodata is not None:
        inside &= z != dsm.nodata
    return np.column_stack([x[inside], y[inside], z[inside]])
