"""Ground / non-ground classification of the reference point cloud.

Implements progressive TIN densification: seed a sparse triangulation with
the lowest point per coarse grid cell, then repeatedly accept points that
lie close to (and at a shallow angle from) their containing facet. The
accepted set only ever grows, so iteration is monotone and deterministic.

Pre-classified inputs can bypass the filter via ``accept_ground_labels``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay

from .core import CLASS_GROUND, CLASS_NON_GROUND, PointCloud, fit_plane
from .errors import DegenerateGeometry, EmptyInput, MissingLabels

log = logging.getLogger(__name__)

# Vertical offsets at or below this are float noise, not relief; accept them
# without the angle test so noise-free planar clouds classify fully ground.
_FLAT_EPS = 1e-9


@dataclass(frozen=True)
class GroundParams:
    """Progressive densification parameters.

    initial_cell: coarse grid size for lowest-point seeding, meters.
    max_dist: vertical point-to-facet acceptance bound, meters.
    max_angle: bound on the angle between the point and the nearest facet
        vertex, degrees.
    iterations: densification rounds (stops early once no point is added).
    """

    initial_cell: float = 20.0
    max_dist: float = 0.3
    max_angle: float = 6.0
    iterations: int = 8

    def __post_init__(self):
        if not self.initial_cell > 0:
            raise ValueError("initial_cell must be > 0")
        if not 0 < self.max_angle < 90:
            raise ValueError("max_angle must be in (0, 90) degrees")
        if not self.max_dist > 0:
            raise ValueError("max_dist must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def _seed_indices(cloud: PointCloud, cell: float) -> np.ndarray:
    """Lowest point per grid cell; ties broken by smallest point index."""
    b = cloud.bounds
    col = np.floor((cloud.x - b.xmin) / cell).astype(np.int64)
    row = np.floor((cloud.y - b.ymin) / cell).astype(np.int64)
    n_cols = int(col.max()) + 1
    key = row * n_cols + col
    # Sort by (cell, z, index); the first entry per cell is the seed.
    order = np.lexsort((np.arange(len(cloud)), cloud.z, key))
    first = np.ones(len(order), dtype=bool)
    first[1:] = key[order][1:] != key[order][:-1]
    return np.sort(order[first])


def _virtual_corners(cloud: PointCloud, seed_idx: np.ndarray) -> np.ndarray:
    """Four points just outside the bounding box, on the seed trend plane.

    They guarantee every real point falls inside the triangulation hull;
    their heights follow the coarse terrain trend so border facets are not
    artificially tilted.
    """
    b = cloud.bounds
    pad = 1.0
    corners_xy = np.array(
        [
            (b.xmin - pad, b.ymin - pad),
            (b.xmax + pad, b.ymin - pad),
            (b.xmax + pad, b.ymax + pad),
            (b.xmin - pad, b.ymax + pad),
        ]
    )
    seeds = cloud.points[seed_idx]
    try:
        trend = fit_plane(seeds)
        z = trend.z_at(corners_xy[:, 0], corners_xy[:, 1])
    except DegenerateGeometry:
        z = np.full(4, float(np.median(seeds[:, 2])))
    return np.column_stack([corners_xy, z])


def _facet_heights(tin_points: np.ndarray, tri: Delaunay, query_xy: np.ndarray):
    """Linear TIN height under each query point plus nearest-vertex distance.

    Returns (inside_mask, facet_z, horiz_dist) with the latter two defined
    only where inside_mask is True.
    """
    simplex = tri.find_simplex(query_xy)
    inside = simplex >= 0
    if not np.any(inside):
        return inside, np.empty(0), np.empty(0)
    s = simplex[inside]
    q = query_xy[inside]
    # Barycentric coordinates from the precomputed affine transforms.
    transform = tri.transform[s]
    b2 = np.einsum("nij,nj->ni", transform[:, :2, :], q - transform[:, 2, :])
    bary = np.concatenate([b2, 1.0 - b2.sum(axis=1, keepdims=True)], axis=1)
    vert_idx = tri.simplices[s]
    vert = tin_points[vert_idx]  # (k, 3, 3)
    facet_z = np.einsum("ni,ni->n", bary, vert[:, :, 2])
    d = np.hypot(vert[:, :, 0] - q[:, 0:1], vert[:, :, 1] - q[:, 1:2]).min(axis=1)
    return inside, facet_z, d


def classify_ground(cloud: PointCloud, params: GroundParams = GroundParams()) -> PointCloud:
    """Label every point ground or non-ground by TIN densification.

    The ground set starts from the lowest point per ``initial_cell`` grid
    cell and grows monotonically: a point is accepted when its vertical
    offset from the containing facet is within ``max_dist`` and the angle
    to the nearest facet vertex is within ``max_angle``.
    """
    if len(cloud) == 0:
        raise EmptyInput("cannot classify an empty point cloud")
    n = len(cloud)
    ground = np.zeros(n, dtype=bool)
    seed_idx = _seed_indices(cloud, params.initial_cell)
    ground[seed_idx] = True
    corners = _virtual_corners(cloud, seed_idx)
    tan_max = np.tan(np.radians(params.max_angle))

    for iteration in range(params.iterations):
        candidates = np.flatnonzero(~ground)
        if candidates.size == 0:
            break
        tin_points = np.vstack([corners, cloud.points[ground]])
        tri = Delaunay(tin_points[:, :2])
        inside, facet_z, horiz = _facet_heights(tin_points, tri, cloud.points[candidates, :2])
        cand_in = candidates[inside]
        dz = np.abs(cloud.points[cand_in, 2] - facet_z)
        near = dz <= _FLAT_EPS
        ok_angle = dz <= horiz * tan_max  # tan is monotone on (0, 90)
        accept = cand_in[(dz <= params.max_dist) & (near | ok_angle)]
        if accept.size == 0:
            log.debug("ground filter converged after %d iterations", iteration + 1)
            break
        ground[accept] = True

    labels = np.where(ground, CLASS_GROUND, CLASS_NON_GROUND).astype(np.uint8)
    log.info("ground filter: %d of %d points labeled ground", int(ground.sum()), n)
    return cloud.with_labels(class_label=labels)


def accept_ground_labels(cloud: PointCloud) -> PointCloud:
    """Pass through a cloud whose ground labels were assigned externally."""
    if cloud.class_label is None:
        raise MissingLabels("input carries no class labels; run the ground filter instead")
    return cloud
