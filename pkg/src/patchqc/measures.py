"""Patch and block quality measures, and reference-target cross-verification.

Per patch i, the deviations Δh_ij are the vertical offsets of the
evaluated points j (photogrammetric cloud or surface-model cells) to the
patch's reference plane, positive when the evaluated surface lies above
the reference. From them:

    μᵢ = mean(Δh_ij)                   (mean deviation)
    σᵢ = std(Δh_ij), n−1 denominator   (precision within the patch)

and over the m valid patches of a block:

    M_MD   = mean(μᵢ)
    STD_MD = std(μᵢ), m−1 denominator
    A_STD  = sqrt(mean(σᵢ²))

Aggregation sorts by patch id first, so results are identical for any
work partitioning.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .core import Plane, Point3, PointCloud, Raster, SpatialIndex, fit_plane
from .errors import (
    DegenerateGeometry,
    InsufficientNeighbors,
    NearVerticalPlane,
    PatchSetMismatch,
    TooFewPatches,
    TooFewPoints,
    TooFewValues,
)
from .patching import Patch, extract_dim_points, extract_dsm_cells
from .screening import PatchStatus, ResolvedThresholds, ScreenConfig, screen_patches

log = logging.getLogger(__name__)

# Vertical offsets to a plane steeper than this are no longer a sane
# stand-in for surface error; segment screening keeps planes well inside.
_MIN_NORMAL_Z = math.cos(math.radians(45.0))


@dataclass(frozen=True)
class PatchMeasure:
    """Per-patch deviation statistics.

    mu_i / sigma_i are NaN when the patch holds too few evaluated points
    (0 or < 2 respectively); such patches never survive screening rule 1.
    """

    patch_id: int
    n_i: int
    mu_i: float
    sigma_i: float


@dataclass(frozen=True)
class BlockReport:
    """Block-level aggregates over the valid patches."""

    m: int
    m_md: float
    std_md: float
    a_std: float
    per_patch: tuple[PatchMeasure, ...]


def point_deviation(p: Point3, plane: Plane) -> float:
    """Vertical offset of a point to the plane, positive above it."""
    if plane.normal[2] <= _MIN_NORMAL_Z:
        raise NearVerticalPlane(
            f"plane slope {plane.slope_deg:.1f} deg exceeds 45; vertical offset unreliable"
        )
    return float(p[2] - plane.z_at(p[0], p[1]))


def vertical_deviations(points: np.ndarray, plane: Plane) -> np.ndarray:
    """Vectorized point_deviation over an (n, 3) array."""
    if plane.normal[2] <= _MIN_NORMAL_Z:
        raise NearVerticalPlane(
            f"plane slope {plane.slope_deg:.1f} deg exceeds 45; vertical offset unreliable"
        )
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return np.empty(0)
    return pts[:, 2] - plane.z_at(pts[:, 0], pts[:, 1])


def patch_measure(patch: Patch, points: np.ndarray) -> PatchMeasure:
    """Deviation mean and spread of one patch; needs >= 2 points."""
    dh = vertical_deviations(points, patch.plane)
    if dh.size < 2:
        raise TooFewPoints(f"patch {patch.id}: {dh.size} points, need >= 2")
    return PatchMeasure(
        patch_id=patch.id,
        n_i=int(dh.size),
        mu_i=float(dh.mean()),
        sigma_i=float(dh.std(ddof=1)),
    )


def _measure_lenient(patch: Patch, points: np.ndarray) -> PatchMeasure:
    """Like patch_measure but yields NaN statistics instead of raising."""
    dh = vertical_deviations(points, patch.plane)
    mu = float(dh.mean()) if dh.size >= 1 else float("nan")
    sigma = float(dh.std(ddof=1)) if dh.size >= 2 else float("nan")
    return PatchMeasure(patch_id=patch.id, n_i=int(dh.size), mu_i=mu, sigma_i=sigma)


def block_measures(measures: Sequence[PatchMeasure]) -> BlockReport:
    """Aggregate per-patch means and spreads over a block.

    Patches are sorted by id before the reduction; every input must have a
    defined spread (screening guarantees this for valid patches).
    """
    if len(measures) < 2:
        raise TooFewPatches(f"block statistics need >= 2 patches, got {len(measures)}")
    ordered = sorted(measures, key=lambda m: m.patch_id)
    mu = np.asarray([m.mu_i for m in ordered])
    sigma = np.asarray([m.sigma_i for m in ordered])
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
        raise TooFewPoints("a patch with undefined statistics reached aggregation")
    return BlockReport(
        m=len(ordered),
        m_md=float(mu.mean()),
        std_md=float(mu.std(ddof=1)),
        a_std=float(np.sqrt(np.mean(sigma**2))),
        per_patch=tuple(ordered),
    )


def format_measures(report: BlockReport) -> str:
    """Compact 'M_MD; STD_MD; A_STD' cell, e.g. '0.002; 0.040; 0.094'."""
    return f"{report.m_md:.3f}; {report.std_md:.3f}; {report.a_std:.3f}"


# ---------------------------------------------------------------------------
# Evaluation driver
# ---------------------------------------------------------------------------

@dataclass
class EvaluationResult:
    """Everything one evaluation pass produced.

    ``measures`` aligns one-to-one with the input patches (id order) and
    includes rejected patches; ``block`` aggregates the valid ones and is
    None when fewer than two patches survived.
    """

    block: Optional[BlockReport]
    measures: list[PatchMeasure]
    statuses: list[PatchStatus]
    thresholds: Optional[ResolvedThresholds]
    valid_ids: list[int]
    rejections: dict[str, int]
    land_cover: dict[str, int]


def _extract_points(patch: Patch, source, index: Optional[SpatialIndex]) -> np.ndarray:
    if isinstance(source, Raster):
        return extract_dsm_cells(patch, source)
    return source.points[extract_dim_points(patch, index)]


def evaluate(
    patches: Sequence[Patch],
    source: Union[PointCloud, Raster],
    screen_config: Optional[ScreenConfig] = None,
    ortho: Optional[Raster] = None,
    shadow_mask=None,
    patch_ids: Optional[Sequence[int]] = None,
) -> EvaluationResult:
    """Measure every patch against a point cloud or surface-model raster.

    Without ``patch_ids`` the patches are screened (rules 1-4) and the
    block aggregates the survivors. With ``patch_ids`` screening is
    bypassed and exactly those patches count as valid: this is how several
    sources are compared over one shared patch set.
    """
    ordered = sorted(patches, key=lambda p: p.id)
    index = SpatialIndex(source) if isinstance(source, PointCloud) else None
    measures = [_measure_lenient(p, _extract_points(p, source, index)) for p in ordered]

    if patch_ids is not None:
        wanted = set(int(i) for i in patch_ids)
        known = {p.id for p in ordered}
        missing = wanted - known
        if missing:
            raise PatchSetMismatch(f"unknown patch ids requested: {sorted(missing)[:5]}")
        statuses = [
            PatchStatus(p.id, p.id in wanted, None, "unlabeled") for p in ordered
        ]
        thresholds = None
    else:
        statuses, thresholds = screen_patches(
            ordered,
            measures,
            screen_config if screen_config is not None else ScreenConfig(),
            ortho=ortho,
            shadow_mask=shadow_mask,
        )

    valid_ids = [s.patch_id for s in statuses if s.valid]
    valid_set = set(valid_ids)
    valid_measures = [m for m in measures if m.patch_id in valid_set]
    block = block_measures(valid_measures) if len(valid_measures) >= 2 else None
    rejections: dict[str, int] = {}
    land_cover: dict[str, int] = {}
    for s in statuses:
        if s.reason is not None:
            rejections[s.reason] = rejections.get(s.reason, 0) + 1
        land_cover[s.land_cover] = land_cover.get(s.land_cover, 0) + 1
    if block is None:
        log.warning("evaluation: only %d valid patches; no block statistics", len(valid_ids))
    return EvaluationResult(
        block=block,
        measures=measures,
        statuses=statuses,
        thresholds=thresholds,
        valid_ids=valid_ids,
        rejections=rejections,
        land_cover=land_cover,
    )


# ---------------------------------------------------------------------------
# Reference-target cross-verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReferenceTarget:
    """A surveyed target used to cross-check the reference cloud."""

    id: str
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class TargetResult:
    """Outcome for one target: residual to its local plane and the verdict.

    status is 'accepted', 'rejected' (3-sigma outlier) or 'excluded'
    (no usable local plane; residual is None then).
    """

    id: str
    x: float
    y: float
    z: float
    residual: Optional[float]
    status: str


@dataclass(frozen=True)
class TargetVerification:
    """Cross-verification summary over all targets."""

    mu: float
    sigma: float
    mu_initial: float
    sigma_initial: float
    results: tuple[TargetResult, ...]

    @property
    def n_accepted(self) -> int:
        return sum(1 for r in self.results if r.status == "accepted")

    @property
    def n_rejected(self) -> int:
        return sum(1 for r in self.results if r.status == "rejected")

    @property
    def n_excluded(self) -> int:
        return sum(1 for r in self.results if r.status == "excluded")


def load_targets(path) -> list[ReferenceTarget]:
    """Read targets from text lines 'id x y z' ('#' comments allowed)."""
    targets = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise TooFewValues(f"target line needs 'id x y z', got: {line!r}")
        targets.append(
            ReferenceTarget(parts[0], float(parts[1]), float(parts[2]), float(parts[3]))
        )
    return targets


def crossverify_targets(
    targets: Sequence[ReferenceTarget],
    als: PointCloud,
    radius: float = 2.0,
) -> TargetVerification:
    """Check surveyed targets against planes fitted to nearby ALS points.

    Each target's residual is its vertical offset to a plane fitted from
    the ALS points within ``radius`` (planimetric). Targets keep their
    residual but are rejected when it sits more than 3 sigma from the mean
    (single pass); the summary statistics are then recomputed once over
    the accepted targets. Targets without >= 3 usable neighbors are
    excluded and reported, not fatal.
    """
    if not targets:
        raise TooFewValues("no reference targets given")
    index = SpatialIndex(als)
    residuals: list[float] = []
    computed: list[tuple[ReferenceTarget, Optional[float]]] = []
    for t in targets:
        nbr = index.radius2d(t.x, t.y, radius)
        if nbr.size < 3:
            log.warning(
                "target %s: %d ALS neighbors within %.2f m (need 3); excluded",
                t.id, nbr.size, radius,
            )
            computed.append((t, None))
            continue
        try:
            plane = fit_plane(als.points[nbr])
            residual = float(t.z - plane.z_at(t.x, t.y))
        except DegenerateGeometry:
            computed.append((t, None))
            continue
        computed.append((t, residual))
        residuals.append(residual)
    if len(residuals) < 2:
        raise InsufficientNeighbors(
            f"only {len(residuals)} targets have a usable local plane; need >= 2"
        )
    res = np.asarray(residuals)
    mu0 = float(res.mean())
    sigma0 = float(res.std(ddof=1))
    results = []
    kept = []
    for t, residual in computed:
        if residual is None:
            results.append(TargetResult(t.id, t.x, t.y, t.z, None, "excluded"))
        elif abs(residual - mu0) <= 3.0 * sigma0:
            results.append(TargetResult(t.id, t.x, t.y, t.z, residual, "accepted"))
            kept.append(residual)
        else:
            results.append(TargetResult(t.id, t.x, t.y, t.z, residual, "rejected"))
    if len(kept) < 2:
        raise TooFewValues("fewer than 2 targets survived the 3-sigma screen")
    kept_arr = np.asarray(kept)
    return TargetVerification(
        mu=float(kept_arr.mean()),
        sigma=float(kept_arr.std(ddof=1)),
        mu_initial=mu0,
        sigma_initial=sigma0,
        results=tuple(results),
    )
