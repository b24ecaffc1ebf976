"""Patch-based vertical quality control of dense-matching point clouds.

The pipeline evaluates a photogrammetric point cloud (or a surface-model
raster derived from it) against an airborne-laser-scanning reference:
ground filtering, planar segmentation, square-patch extraction over
occupancy grids, patch screening, and per-patch / per-block deviation
statistics with report artifacts.
"""

from .core import (
    Box2D,
    Plane,
    Point3,
    PointCloud,
    Raster,
    SpatialIndex,
    box_query,
    eigen_features,
    fit_plane,
)
from .errors import ConfigError, DataError, PatchQCError
from .ground import GroundParams, accept_ground_labels, classify_ground
from .measures import (
    BlockReport,
    PatchMeasure,
    ReferenceTarget,
    block_measures,
    crossverify_targets,
    evaluate,
    format_measures,
    patch_measure,
    point_deviation,
)
from .patching import (
    OccupancyGrid,
    Patch,
    PatchingParams,
    build_grid,
    build_patches,
    dedupe_patches,
    extract_dim_points,
    extract_dsm_cells,
    select_patches,
)
from .report import Histogram, PatchMap, build_histogram, build_patch_map
from .screening import (
    ScreenConfig,
    ShadowMask,
    compute_negi,
    compute_shadow_mask,
    five_point_probe,
    screen_patches,
)
from .segmentation import (
    ScreenThresholds,
    SegParams,
    SegmentFeatures,
    hough_seeds,
    segment_cloud,
    segment_features,
    screen_segments,
    surface_grow,
)
from .synth import BiasField, SceneSpec, SceneTruth, generate_scene, idw_dsm, oracle_measures

__version__ = "0.1.0"

__all__ = [
    "Box2D", "Plane", "Point3", "PointCloud", "Raster", "SpatialIndex",
    "box_query", "eigen_features", "fit_plane",
    "ConfigError", "DataError", "PatchQCError",
    "GroundParams", "accept_ground_labels", "classify_ground",
    "BlockReport", "PatchMeasure", "ReferenceTarget", "block_measures",
    "crossverify_targets", "evaluate", "format_measures", "patch_measure",
    "point_deviation",
    "OccupancyGrid", "Patch", "PatchingParams", "build_grid", "build_patches",
    "dedupe_patches", "extract_dim_points", "extract_dsm_cells", "select_patches",
    "Histogram", "PatchMap", "build_histogram", "build_patch_map",
    "ScreenConfig", "ShadowMask", "compute_negi", "compute_shadow_mask",
    "five_point_probe", "screen_patches",
    "ScreenThresholds", "SegParams", "SegmentFeatures", "hough_seeds",
    "segment_cloud", "segment_features", "screen_segments", "surface_grow",
    "BiasField", "SceneSpec", "SceneTruth", "generate_scene", "idw_dsm",
    "oracle_measures",
    "__version__",
]
