"""Core data model and geometric primitives.

Provides the point cloud / raster containers shared by every pipeline stage,
total-least-squares plane fitting, covariance eigen-features, and a KD-tree
backed spatial index with exact half-open box queries.

Conventions:
- All coordinates are in one shared projected CRS, in meters.
- Plane equation is ``normal . p = d`` with the normal normalized to unit
  length and oriented so ``normal.z >= 0`` (signed offsets are positive-up).
- 2D boxes and grid cells are half-open: ``[xmin, xmax) x [ymin, ymax)``,
  so tilings partition space with no double counting.
- Class labels follow the LAS convention: 2 = ground, 1 = non-ground.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateGeometry, EmptyInput

CLASS_NON_GROUND = 1
CLASS_GROUND = 2

# Relative eigenvalue gap below which a covariance matrix is treated as
# rank-deficient (coincident or collinear points).
_RANK_EPS = 1e-12


class Point3(NamedTuple):
    """A single 3D point, in meters."""

    x: float
    y: float
    z: float


@dataclass(frozen=True)
class Box2D:
    """Half-open axis-aligned rectangle ``[xmin, xmax) x [ymin, ymax)``."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))

    def corners(self) -> list[tuple[float, float]]:
        """The four corners, counter-clockwise from (xmin, ymin)."""
        return [
            (self.xmin, self.ymin),
            (self.xmax, self.ymin),
            (self.xmax, self.ymax),
            (self.xmin, self.ymax),
        ]

    def contains(self, x, y):
        """Vectorized half-open membership test."""
        return (x >= self.xmin) & (x < self.xmax) & (y >= self.ymin) & (y < self.ymax)

    def intersects(self, other: "Box2D") -> bool:
        return not (
            other.xmax <= self.xmin
            or self.xmax <= other.xmin
            or other.ymax <= self.ymin
            or self.ymax <= other.ymin
        )


@dataclass(frozen=True)
class Bounds3:
    """Axis-aligned 3D bounding box (closed on all sides)."""

    xmin: float
    ymin: float
    zmin: float
    xmax: float
    ymax: float
    zmax: float

    def as_box2d(self) -> Box2D:
        return Box2D(self.xmin, self.ymin, self.xmax, self.ymax)


def _as_points_array(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) array of points, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("point coordinates must be finite")
    return arr


class PointCloud:
    """3D points with optional per-point class and segment labels.

    Points are stored as an (n, 3) float64 array; insertion order is
    preserved so labels computed by one stage stay aligned downstream.
    ``class_label`` uses 2 = ground / 1 = non-ground; ``segment_id`` uses
    0 = unsegmented and positive integers for segment membership.
    """

    def __init__(
        self,
        points,
        class_label: Optional[np.ndarray] = None,
        segment_id: Optional[np.ndarray] = None,
    ):
        self.points = _as_points_array(points)
        n = len(self.points)
        if n == 0:
            raise EmptyInput("a point cloud needs at least one point")
        if class_label is not None:
            class_label = np.asarray(class_label, dtype=np.uint8)
            if class_label.shape != (n,):
                raise ValueError("class_label must be one value per point")
        if segment_id is not None:
            segment_id = np.asarray(segment_id, dtype=np.int32)
            if segment_id.shape != (n,):
                raise ValueError("segment_id must be one value per point")
        self.class_label = class_label
        self.segment_id = segment_id

    def __len__(self) -> int:
        return len(self.points)

    @property
    def x(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def z(self) -> np.ndarray:
        return self.points[:, 2]

    @cached_property
    def bounds(self) -> Bounds3:
        if len(self.points) == 0:
            raise ValueError("empty point cloud has no bounds")
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return Bounds3(lo[0], lo[1], lo[2], hi[0], hi[1], hi[2])

    def ground_mask(self) -> np.ndarray:
        """Boolean mask of ground-labeled points (requires class_label)."""
        if self.class_label is None:
            raise ValueError("point cloud carries no class labels")
        return self.class_label == CLASS_GROUND

    def subset(self, indices) -> "PointCloud":
        """New cloud with the selected points, labels carried along."""
        indices = np.asarray(indices)
        return PointCloud(
            self.points[indices],
            None if self.class_label is None else self.class_label[indices],
            None if self.segment_id is None else self.segment_id[indices],
        )

    def with_labels(
        self,
        class_label: Optional[np.ndarray] = None,
        segment_id: Optional[np.ndarray] = None,
    ) -> "PointCloud":
        """Copy of this cloud with labels replaced (points shared)."""
        return PointCloud(
            self.points,
            self.class_label if class_label is None else class_label,
            self.segment_id if segment_id is None else segment_id,
        )


@dataclass(frozen=True)
class Plane:
    """A fitted plane ``normal . p = d`` with its fit residual.

    ``rpf`` is the standard deviation of the perpendicular point-to-plane
    distances of the fitting points (the residual of plane fitting);
    ``support`` is the number of points used in the fit.
    """

    normal: np.ndarray
    d: float
    rpf: float = 0.0
    support: int = 3

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        norm = float(np.linalg.norm(n))
        if not np.isfinite(norm) or abs(norm - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length")
        if n[2] < 0:
            raise ValueError("plane normal must be oriented with z >= 0")
        if self.rpf < 0:
            raise ValueError("rpf must be non-negative")
        if self.support < 3:
            raise ValueError("plane support must be at least 3 points")
        object.__setattr__(self, "normal", n)

    @property
    def slope_deg(self) -> float:
        """Angle between the plane normal and the vertical, in degrees."""
        nz = min(1.0, max(-1.0, float(self.normal[2])))
        return float(np.degrees(np.arccos(nz)))

    def z_at(self, x, y):
        """Plane height at the footprint (x, y); requires a non-vertical plane."""
        nx, ny, nz = self.normal
        if nz <= 1e-12:
            raise DegenerateGeometry("plane is vertical; height is undefined")
        return (self.d - nx * np.asarray(x) - ny * np.asarray(y)) / nz

    def signed_distance(self, points) -> np.ndarray:
        """Perpendicular signed distances, positive on the +normal side."""
        pts = _as_points_array(points)
        return pts @ self.normal - self.d


def _orient_up(normal: np.ndarray) -> np.ndarray:
    """Flip a unit normal so z >= 0; tie-break vertical planes consistently."""
    if normal[2] < 0:
        return -normal
    if normal[2] == 0:
        # Vertical plane: make the first nonzero horizontal component positive.
        if normal[0] < 0 or (normal[0] == 0 and normal[1] < 0):
            return -normal
    return normal


def _centered_covariance(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered / len(pts)
    return cov, centroid


def fit_plane(points) -> Plane:
    """Fit a total-least-squares plane through 3D points.

    The plane normal is the eigenvector of the centered covariance matrix
    with the smallest eigenvalue; the plane passes through the centroid.
    Raises DegenerateGeometry for fewer than 3 points or collinear input.
    """
    pts = _as_points_array(points)
    if len(pts) < 3:
        raise DegenerateGeometry(f"plane fit needs >= 3 points, got {len(pts)}")
    cov, centroid = _centered_covariance(pts)
    eigvals, eigvecs = np.linalg.eigh(cov)  # ascending eigenvalues
    if eigvals[2] <= 0 or eigvals[1] <= _RANK_EPS * eigvals[2]:
        raise DegenerateGeometry("points are collinear or coincident")
    normal = _orient_up(eigvecs[:, 0].copy())
    d = float(normal @ centroid)
    # The smallest eigenvalue is the mean squared perpendicular distance.
    rpf = float(np.sqrt(max(eigvals[0], 0.0)))
    return Plane(normal=normal, d=d, rpf=rpf, support=len(pts))


def eigen_features(points) -> tuple[float, float, float, float]:
    """Eigenvalues of the centered covariance (descending) and linearity.

    Linearity is (l1 - l2) / l1; it is 1 for a perfect line and 0 for an
    isotropic planar distribution. Returns 0 when all points coincide.
    """
    pts = _as_points_array(points)
    if len(pts) < 3:
        raise DegenerateGeometry(f"eigen features need >= 3 points, got {len(pts)}")
    cov, _ = _centered_covariance(pts)
    eigvals = np.linalg.eigvalsh(cov)[::-1]
    eigvals = np.clip(eigvals, 0.0, None)
    l1, l2, l3 = (float(v) for v in eigvals)
    linearity = (l1 - l2) / l1 if l1 > 0 else 0.0
    return l1, l2, l3, linearity


class SpatialIndex:
    """KD-tree index over a point cloud for box and radius queries.

    Query results are index arrays into the cloud's point order, sorted
    ascending so downstream reductions are deterministic.
    """

    def __init__(self, cloud: PointCloud):
        if len(cloud) == 0:
            raise ValueError("cannot index an empty point cloud")
        self.cloud = cloud

    @cached_property
    def _tree2d(self) -> cKDTree:
        return cKDTree(self.cloud.points[:, :2])

    @cached_property
    def _tree3d(self) -> cKDTree:
        return cKDTree(self.cloud.points)

    def box(self, box: Box2D) -> np.ndarray:
        """Indices of points whose (x, y) lies in the half-open box."""
        if box.width <= 0 or box.height <= 0:
            return np.empty(0, dtype=np.intp)
        cx, cy = box.center
        radius = 0.5 * float(np.hypot(box.width, box.height)) + 1e-12
        cand = self._tree2d.query_ball_point([cx, cy], radius)
        cand = np.asarray(cand, dtype=np.intp)
        if cand.size == 0:
            return cand
        pts = self.cloud.points[cand]
        keep = box.contains(pts[:, 0], pts[:, 1])
        return np.sort(cand[keep])

    def radius2d(self, x: float, y: float, radius: float) -> np.ndarray:
        """Indices of points within planimetric distance ``radius`` of (x, y)."""
        idx = self._tree2d.query_ball_point([x, y], radius)
        return np.sort(np.asarray(idx, dtype=np.intp))

    def radius3d(self, point, radius: float) -> np.ndarray:
        """Indices of points within 3D distance ``radius`` of ``point``."""
        idx = self._tree3d.query_ball_point(np.asarray(point, dtype=float), radius)
        return np.sort(np.asarray(idx, dtype=np.intp))


def box_query(index: SpatialIndex, box: Box2D) -> np.ndarray:
    """Exactly the points whose (x, y) lies inside the half-open box."""
    return index.box(box)


@dataclass
class Raster:
    """Georeferenced grid with 1 (scalar) or 3 (RGB) bands.

    ``origin`` is the upper-left corner; pixel (col, row) has its center at
    ``origin + ((col + 0.5) * cell_size, -(row + 0.5) * cell_size)``.
    Bands are stored as a (n_bands, height, width) array.
    """

    origin: tuple[float, float]
    cell_size: float
    bands: np.ndarray
    nodata: Optional[float] = None

    def __post_init__(self):
        self.bands = np.asarray(self.bands)
        if self.bands.ndim == 2:
            self.bands = self.bands[np.newaxis, :, :]
        if self.bands.ndim != 3 or self.bands.shape[0] not in (1, 3):
            raise ValueError("raster must have 1 or 3 bands of shape (height, width)")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def n_bands(self) -> int:
        return self.bands.shape[0]

    @property
    def height(self) -> int:
        return self.bands.shape[1]

    @property
    def width(self) -> int:
        return self.bands.shape[2]

    def xy_to_rowcol(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Pixel indices containing the location; may be out of range."""
        col = np.floor((np.asarray(x) - self.origin[0]) / self.cell_size).astype(np.int64)
        row = np.floor((self.origin[1] - np.asarray(y)) / self.cell_size).astype(np.int64)
        return row, col

    def rowcol_to_xy(self, row, col) -> tuple[np.ndarray, np.ndarray]:
        """Center coordinates of the given pixels."""
        x = self.origin[0] + (np.asarray(col) + 0.5) * self.cell_size
        y = self.origin[1] - (np.asarray(row) + 0.5) * self.cell_size
        return x, y

    def in_range(self, row, col):
        return (row >= 0) & (row < self.height) & (col >= 0) & (col < self.width)

    def sample(self, x: float, y: float, band: int = 0):
        """Nearest-pixel value at (x, y), or None outside the raster."""
        row, col = self.xy_to_rowcol(x, y)
        if not self.in_range(row, col):
            return None
        value = self.bands[band, int(row), int(col)]
        if self.nodata is not None and value == self.nodata:
            return None
        return value

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid of all pixel-center coordinates, shape (height, width)."""
        cols = np.arange(self.width)
        rows = np.arange(self.height)
        x = self.origin[0] + (cols + 0.5) * self.cell_size
        y = self.origin[1] - (rows + 0.5) * self.cell_size
        return np.meshgrid(x, y)
