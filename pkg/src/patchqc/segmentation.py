"""Planar segment extraction from ground points.

Seed planes come from a 3D Hough transform over a discretized normal
hemisphere crossed with plane-offset bins; segments are then grown from the
strongest unclaimed seed outward, re-fitting the plane after every accepted
point. Grown segments are screened by five shape features (size, linearity,
normal slope, average normal angle, plane-fit residual) before patching.

Offsets are binned relative to the ground centroid, so segment memberships
are invariant under rigid translation of the whole cloud.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import PointCloud, Plane, fit_plane, eigen_features
from .errors import DegenerateGeometry, NoSeeds

log = logging.getLogger(__name__)

_ORIENT_CHUNK = 256  # orientations per accumulator pass; bounds peak memory


@dataclass(frozen=True)
class SegParams:
    """Seed detection and surface-growing parameters.

    grow_radius: neighborhood radius for growing, meters.
    max_plane_dist: perpendicular point-to-plane acceptance bound, meters
        (also the Hough offset bin width).
    hough_angle_step: angular resolution of the normal hemisphere, degrees.
    hough_max_slope: steepest seed normal considered, degrees from vertical.
    min_seed_support: minimum points for a Hough bin to seed a segment.
    """

    grow_radius: float = 1.0
    max_plane_dist: float = 0.2
    hough_angle_step: float = 3.0
    hough_max_slope: float = 45.0
    min_seed_support: int = 100

    def __post_init__(self):
        if not self.grow_radius > 0:
            raise ValueError("grow_radius must be > 0")
        if not self.max_plane_dist > 0:
            raise ValueError("max_plane_dist must be > 0")
        if not 0 < self.hough_angle_step <= 45:
            raise ValueError("hough_angle_step must be in (0, 45] degrees")
        if not 0 < self.hough_max_slope <= 90:
            raise ValueError("hough_max_slope must be in (0, 90] degrees")
        if self.min_seed_support < 3:
            raise ValueError("min_seed_support must be >= 3")


@dataclass(frozen=True)
class SegmentFeatures:
    """Shape features of one segment (the screening inputs)."""

    size: int
    linearity: float
    normal_slope: float
    average_angle: float
    rpf: float


@dataclass(frozen=True)
class ScreenThresholds:
    """Acceptance bounds for segment screening.

    A segment is kept iff size >= min_size, linearity <= max_linearity,
    normal_slope <= max_slope, average_angle <= max_avg_angle and
    rpf <= max_rpf.
    """

    min_size: int = 100
    max_linearity: float = 0.99
    max_slope: float = 45.0
    max_avg_angle: float = 5.0
    max_rpf: float = 0.1

    def __post_init__(self):
        for name in ("min_size", "max_linearity", "max_slope", "max_avg_angle", "max_rpf"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def _hemisphere_normals(max_slope_deg: float, step_deg: float) -> np.ndarray:
    """Unit normals covering slopes [0, max_slope] in step-degree rings.

    The zenith direction appears once; each nonzero slope ring carries a
    full azimuth sweep at the same angular step.
    """
    normals = [(0.0, 0.0, 1.0)]
    slopes = np.arange(step_deg, max_slope_deg + 0.5 * step_deg, step_deg)
    azimuths = np.arange(0.0, 360.0, step_deg)
    for s in np.radians(slopes):
        for a in np.radians(azimuths):
            normals.append((np.sin(s) * np.cos(a), np.sin(s) * np.sin(a), np.cos(s)))
    return np.asarray(normals, dtype=np.float64)


def _eligible_indices(cloud: PointCloud) -> np.ndarray:
    """Ground-point indices when labels exist, otherwise all points."""
    if cloud.class_label is not None:
        return np.flatnonzero(cloud.ground_mask())
    return np.arange(len(cloud), dtype=np.intp)


def hough_seeds(
    cloud: PointCloud, params: SegParams = SegParams()
) -> list[tuple[Plane, np.ndarray]]:
    """Detect seed planes by a 3D Hough transform over the ground points.

    Returns (plane, support indices) pairs in decreasing support order.
    Support points lie within max_plane_dist of the (re-fitted) seed plane
    and each point supports at most one seed. Raises NoSeeds when no
    accumulator bin reaches min_seed_support.
    """
    eligible = _eligible_indices(cloud)
    pts = cloud.points[eligible]
    n = len(pts)
    if n == 0:
        raise NoSeeds("no ground points to seed from")
    normals = _hemisphere_normals(params.hough_max_slope, params.hough_angle_step)
    w = params.max_plane_dist
    centroid = pts.mean(axis=0)
    centered = pts - centroid

    # Pass 1: accumulate support per (orientation, offset bin); keep the
    # bins that could seed a segment. Bin offsets can be negative, so each
    # chunk is shifted into bincount range.
    heap: list[tuple[int, int, int]] = []
    for start in range(0, len(normals), _ORIENT_CHUNK):
        block = normals[start : start + _ORIENT_CHUNK]
        offs = centered @ block.T  # (n, chunk)
        bins = np.floor(offs / w).astype(np.int64)
        lo = bins.min()
        span = int(bins.max() - lo) + 1
        flat = (bins - lo) + span * np.arange(block.shape[0], dtype=np.int64)
        counts = np.bincount(flat.ravel(order="F"), minlength=span * block.shape[0])
        hot = np.flatnonzero(counts >= params.min_seed_support)
        for h in hot:
            orient = start + int(h // span)
            offset_bin = int(h % span + lo)
            heap.append((-int(counts[h]), orient, offset_bin))
    if not heap:
        raise NoSeeds(
            f"no Hough bin reached min_seed_support = {params.min_seed_support}"
        )
    heapq.heapify(heap)

    # Pass 2: greedy extraction. Counts go stale as points are claimed, so
    # each popped bin is recounted over unclaimed points and pushed back if
    # it no longer dominates (lazy-greedy).
    claimed = np.zeros(n, dtype=bool)
    dead: set[tuple[int, int]] = set()
    seeds: list[tuple[Plane, np.ndarray]] = []
    while heap:
        neg_count, orient, offset_bin = heapq.heappop(heap)
        if (orient, offset_bin) in dead:
            continue
        free = ~claimed
        offs = centered[free] @ normals[orient]
        members_local = np.flatnonzero(free)[np.floor(offs / w).astype(np.int64) == offset_bin]
        count = members_local.size
        if count < params.min_seed_support:
            dead.add((orient, offset_bin))
            continue
        if heap and count < -heap[0][0]:
            heapq.heappush(heap, (-count, orient, offset_bin))
            continue
        try:
            plane = fit_plane(pts[members_local])
        except DegenerateGeometry:
            dead.add((orient, offset_bin))
            continue
        dist = np.abs(pts[members_local] @ plane.normal - plane.d)
        support_local = members_local[dist <= params.max_plane_dist]
        if support_local.size < params.min_seed_support:
            dead.add((orient, offset_bin))
            continue
        claimed[support_local] = True
        dead.add((orient, offset_bin))
        seeds.append((plane, np.sort(eligible[support_local])))
    if not seeds:
        raise NoSeeds("no Hough bin produced a coherent seed plane")
    log.info("hough: %d seed planes from %d ground points", len(seeds), n)
    return seeds


class _GrowState:
    """Incremental centroid/scatter of a growing segment, refit per point."""

    def __init__(self, points: np.ndarray):
        self.count = len(points)
        self.mean = points.mean(axis=0)
        centered = points - self.mean
        self.scatter = centered.T @ centered
        self._refit()

    def add(self, p: np.ndarray) -> None:
        self.count += 1
        delta = p - self.mean
        self.mean += delta / self.count
        self.scatter += np.outer(delta, p - self.mean)
        self._refit()

    def _refit(self) -> None:
        eigvals, eigvecs = np.linalg.eigh(self.scatter / self.count)
        normal = eigvecs[:, 0]
        if normal[2] < 0:
            normal = -normal
        self.normal = normal
        self.d = float(normal @ self.mean)

    def dist(self, p: np.ndarray) -> float:
        return abs(float(p @ self.normal) - self.d)


def surface_grow(
    cloud: PointCloud,
    seeds: list[tuple[Plane, np.ndarray]],
    params: SegParams = SegParams(),
) -> PointCloud:
    """Grow planar segments outward from each seed's support set.

    The support enters as one block; the frontier (unclaimed neighbors
    within grow_radius) is then consumed nearest-to-seed-centroid first,
    accepting a point when its perpendicular distance to the incrementally
    re-fitted plane stays within max_plane_dist. Points belong to at most
    one segment; segment ids start at 1, unassigned points keep 0.
    """
    eligible = _eligible_indices(cloud)
    pts = cloud.points[eligible]
    pos_of = np.full(len(cloud), -1, dtype=np.intp)
    pos_of[eligible] = np.arange(len(eligible))
    tree = cKDTree(pts)
    claimed = np.zeros(len(pts), dtype=bool)
    segment_of = np.zeros(len(pts), dtype=np.int32)
    next_id = 1

    for plane, support_global in seeds:
        support = pos_of[support_global]
        support = support[(support >= 0) & ~claimed[support]]
        if support.size < 3:
            continue
        members = list(support)
        claimed[support] = True
        state = _GrowState(pts[support])
        seed_centroid = state.mean.copy()
        visited = np.zeros(len(pts), dtype=bool)
        visited[support] = True

        frontier: list[tuple[float, int]] = []
        for nbrs in tree.query_ball_point(pts[support], params.grow_radius):
            for j in nbrs:
                if not visited[j]:
                    visited[j] = True
                    d2 = pts[j] - seed_centroid
                    heapq.heappush(frontier, (float(d2[0] ** 2 + d2[1] ** 2 + d2[2] ** 2), j))
        while frontier:
            _, j = heapq.heappop(frontier)
            if claimed[j]:
                continue
            if state.dist(pts[j]) > params.max_plane_dist:
                continue
            claimed[j] = True
            members.append(j)
            state.add(pts[j])
            for k in tree.query_ball_point(pts[j], params.grow_radius):
                if not visited[k]:
                    visited[k] = True
                    d2 = pts[k] - seed_centroid
                    heapq.heappush(frontier, (float(d2[0] ** 2 + d2[1] ** 2 + d2[2] ** 2), k))

        # Incremental refits drift, so the final plane can disown early
        # members; trim until every member sits within max_plane_dist.
        member_arr = np.asarray(sorted(members), dtype=np.intp)
        while member_arr.size >= 3:
            try:
                final = fit_plane(pts[member_arr])
            except DegenerateGeometry:
                member_arr = member_arr[:0]
                break
            dist = np.abs(pts[member_arr] @ final.normal - final.d)
            bad = dist > params.max_plane_dist + 1e-12
            if not bad.any():
                break
            claimed[member_arr[bad]] = False
            member_arr = member_arr[~bad]
        if member_arr.size < 3:
            claimed[member_arr] = False
            continue
        segment_of[member_arr] = next_id
        next_id += 1

    segment_id = np.zeros(len(cloud), dtype=np.int32)
    segment_id[eligible] = segment_of
    log.info("growing: %d segments over %d points", next_id - 1, int((segment_of > 0).sum()))
    return cloud.with_labels(segment_id=segment_id)


def local_normals(points: np.ndarray, k: int = 10) -> np.ndarray:
    """Per-point unit normals from the k nearest neighbors (batched eigh)."""
    n = len(points)
    kk = min(k, n)
    tree = cKDTree(points)
    _, idx = tree.query(points, k=kk, workers=1)
    if kk == 1:
        idx = idx[:, np.newaxis]
    nbr = points[idx]  # (n, kk, 3)
    centered = nbr - nbr.mean(axis=1, keepdims=True)
    covs = np.einsum("nki,nkj->nij", centered, centered) / kk
    _, eigvecs = np.linalg.eigh(covs)
    normals = eigvecs[:, :, 0]
    flip = normals[:, 2] < 0
    normals[flip] = -normals[flip]
    return normals


def segment_features(points, k: int = 10) -> SegmentFeatures:
    """The five screening features of one segment's point set."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 3:
        raise DegenerateGeometry(f"segment features need >= 3 points, got {len(pts)}")
    _, _, _, linearity = eigen_features(pts)
    plane = fit_plane(pts)
    normals = local_normals(pts, k=k)
    cos = np.clip(np.abs(normals @ plane.normal), 0.0, 1.0)
    average_angle = float(np.degrees(np.arccos(cos)).mean())
    return SegmentFeatures(
        size=len(pts),
        linearity=linearity,
        normal_slope=plane.slope_deg,
        average_angle=average_angle,
        rpf=plane.rpf,
    )


def passes_screen(features: SegmentFeatures, thresholds: ScreenThresholds) -> bool:
    return (
        features.size >= thresholds.min_size
        and features.linearity <= thresholds.max_linearity
        and features.normal_slope <= thresholds.max_slope
        and features.average_angle <= thresholds.max_avg_angle
        and features.rpf <= thresholds.max_rpf
    )


def screen_segments(
    cloud: PointCloud,
    thresholds: ScreenThresholds = ScreenThresholds(),
    k: int = 10,
) -> tuple[PointCloud, dict[int, SegmentFeatures]]:
    """Drop segments failing any of the five feature bounds.

    Returns the cloud with failing segments unassigned (id 0) plus the
    feature table of every input segment for reporting.
    """
    if cloud.segment_id is None:
        raise DegenerateGeometry("cloud has no segment ids; run segmentation first")
    features: dict[int, SegmentFeatures] = {}
    segment_id = cloud.segment_id.copy()
    for sid in np.unique(cloud.segment_id):
        if sid == 0:
            continue
        mask = cloud.segment_id == sid
        try:
            feats = segment_features(cloud.points[mask], k=k)
        except DegenerateGeometry:
            segment_id[mask] = 0
            continue
        features[int(sid)] = feats
        if not passes_screen(feats, thresholds):
            segment_id[mask] = 0
    kept = len({int(s) for s in np.unique(segment_id)} - {0})
    log.info("segment screen: kept %d of %d segments", kept, len(features))
    return cloud.with_labels(segment_id=segment_id), features


def segment_cloud(
    cloud: PointCloud,
    params: SegParams = SegParams(),
    thresholds: ScreenThresholds = ScreenThresholds(),
) -> tuple[PointCloud, dict[int, SegmentFeatures]]:
    """Full segmentation stage: seeds, growing, feature screen.

    A cloud yielding no seed planes is valid and comes back with zero
    segments rather than an error.
    """
    try:
        seeds = hough_seeds(cloud, params)
    except NoSeeds:
        log.info("segmentation: no seed planes; returning zero segments")
        return cloud.with_labels(segment_id=np.zeros(len(cloud), dtype=np.int32)), {}
    grown = surface_grow(cloud, seeds, params)
    return screen_segments(grown, thresholds)
