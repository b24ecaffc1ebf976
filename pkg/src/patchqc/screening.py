"""Patch screening: point sufficiency, mean-deviation cap, shadow, vegetation.

Rules run in a fixed order per patch and the first failure is recorded:

1. enough evaluated points in the patch,
2. |mean deviation| within a cap (auto: 99th percentile of |mean| + 2 cm),
3. no probe location shaded (Otsu-thresholded luminance mask),
4. no probe location vegetated (normalized excessive green index > cutoff).

Probes are the four patch corners plus the center, sampled at the nearest
orthoimage pixel; a probe falling outside the raster fails its rule.
Screening never mutates patch geometry; it only labels patches.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import Box2D, Raster
from .errors import ConfigError, DegenerateHistogram, MissingOrtho

log = logging.getLogger(__name__)

REASON_POINTS = "too_few_dim_points"
REASON_MEAN_DEV = "mean_dev_exceeds"
REASON_SHADOW = "shaded"
REASON_VEGETATION = "vegetation"

COVER_BARE = "bare_ground"
COVER_GRASS = "grassland"
COVER_SHADED = "shaded"
COVER_UNLABELED = "unlabeled"  # no orthoimage available

_LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class ScreenConfig:
    """Screening thresholds; "auto" values resolve from the patch ensemble.

    min_dim_points: explicit count, or "auto" = min_dim_factor x median
        patch point count (floored at 2 so spreads stay defined).
    max_abs_mean_dev: explicit cap in meters, or "auto" = 99th percentile
        of |mean deviation| + mean_dev_tolerance.
    shadow_method: "otsu" derives the luminance cutoff from the image,
        "fixed" uses shadow_threshold.
    """

    min_dim_points: Union[int, str] = "auto"
    min_dim_factor: float = 0.5
    max_abs_mean_dev: Union[float, str] = "auto"
    mean_dev_tolerance: float = 0.02
    negi_threshold: float = 0.1
    shadow_method: str = "otsu"
    shadow_threshold: Optional[float] = None
    use_shadow: bool = True
    use_vegetation: bool = True

    def __post_init__(self):
        if isinstance(self.min_dim_points, str):
            if self.min_dim_points != "auto":
                raise ConfigError("min_dim_points must be a count or 'auto'")
        elif self.min_dim_points < 1:
            raise ConfigError("min_dim_points must be >= 1")
        if not self.min_dim_factor > 0:
            raise ConfigError("min_dim_factor must be > 0")
        if isinstance(self.max_abs_mean_dev, str):
            if self.max_abs_mean_dev != "auto":
                raise ConfigError("max_abs_mean_dev must be meters or 'auto'")
        elif not self.max_abs_mean_dev > 0:
            raise ConfigError("max_abs_mean_dev must be > 0")
        if self.mean_dev_tolerance < 0:
            raise ConfigError("mean_dev_tolerance must be >= 0")
        if not -1 < self.negi_threshold < 1:
            raise ConfigError("negi_threshold must be in (-1, 1)")
        if self.shadow_method not in ("otsu", "fixed"):
            raise ConfigError("shadow_method must be 'otsu' or 'fixed'")
        if self.shadow_method == "fixed" and self.shadow_threshold is None:
            raise ConfigError("shadow_method 'fixed' requires shadow_threshold")


@dataclass(frozen=True)
class ResolvedThresholds:
    """Concrete rule-1/rule-2 cutoffs after auto resolution."""

    min_dim_points: float
    max_abs_mean_dev: float


@dataclass(frozen=True)
class PatchStatus:
    """Screening outcome of one patch."""

    patch_id: int
    valid: bool
    reason: Optional[str]  # first failing rule, None when valid
    land_cover: str


def compute_negi(r, g, b):
    """Normalized excessive green index (2G - R - B) / (2G + R + B).

    Vectorized; returns NaN where the denominator is zero (undefined,
    treated as non-vegetation by the callers).
    """
    r = np.asarray(r, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    num = 2.0 * g - r - b
    den = 2.0 * g + r + b
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    return out if out.ndim else float(out)


def otsu_threshold(values: np.ndarray, n_bins: int = 256) -> Optional[float]:
    """Histogram threshold maximizing between-class variance.

    Values are binned over [0, n_bins); ties in the variance curve resolve
    to the middle of the maximal plateau so bimodal inputs split between
    the modes. Returns None for a constant input (no threshold exists).
    """
    vals = np.asarray(values, dtype=np.float64).ravel()
    hist = np.bincount(np.clip(vals, 0, n_bins - 1).astype(np.int64), minlength=n_bins)
    total = hist.sum()
    if total == 0 or np.count_nonzero(hist) < 2:
        return None
    p = hist / total
    levels = np.arange(n_bins, dtype=np.float64)
    omega = np.cumsum(p)  # class-0 weight for threshold t = bins <= t
    mu = np.cumsum(p * levels)
    mu_total = mu[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_b = (mu_total * omega - mu) ** 2 / (omega * (1.0 - omega))
    sigma_b[~np.isfinite(sigma_b)] = -1.0
    best = sigma_b.max()
    plateau = np.flatnonzero(sigma_b >= best - 1e-12 * max(best, 1.0))
    # A luminance strictly below the cut is shadow; +1 keeps the plateau's
    # low mode on the shadow side of the strict comparison.
    return float(0.5 * (plateau[0] + plateau[-1] + 1))


@dataclass(frozen=True)
class ShadowMask:
    """Boolean shadow raster sharing the source orthoimage's georeferencing."""

    raster: Raster

    def shadow_at(self, x: float, y: float) -> Optional[bool]:
        """Nearest-pixel lookup; None outside the raster."""
        row, col = self.raster.xy_to_rowcol(x, y)
        if not self.raster.in_range(row, col):
            return None
        return bool(self.raster.bands[0, int(row), int(col)])


def compute_shadow_mask(ortho: Raster, config: ScreenConfig = ScreenConfig()) -> ShadowMask:
    """Shadow mask from the orthoimage's luminance histogram.

    A pixel is shadow iff its luminance (0.299R + 0.587G + 0.114B) falls
    below the Otsu threshold (or the configured fixed threshold). Constant
    luminance has no histogram split: the mask comes back all-false with a
    DegenerateHistogram warning.
    """
    if ortho.n_bands != 3:
        raise MissingOrtho("shadow mask needs a 3-band RGB orthoimage")
    lum = (
        _LUMA[0] * ortho.bands[0].astype(np.float64)
        + _LUMA[1] * ortho.bands[1].astype(np.float64)
        + _LUMA[2] * ortho.bands[2].astype(np.float64)
    )
    if config.shadow_method == "fixed":
        threshold: Optional[float] = config.shadow_threshold
    else:
        threshold = otsu_threshold(lum)
        if threshold is None:
            warnings.warn(
                "orthoimage luminance is constant; shadow mask is empty",
                DegenerateHistogram,
                stacklevel=2,
            )
            mask = np.zeros(lum.shape, dtype=bool)
            return ShadowMask(Raster(ortho.origin, ortho.cell_size, mask[np.newaxis]))
    mask = lum < threshold
    return ShadowMask(Raster(ortho.origin, ortho.cell_size, mask[np.newaxis]))


def probe_locations(bounds: Box2D) -> list[tuple[float, float]]:
    """The four corners and the center of a patch footprint."""
    return bounds.corners() + [bounds.center]


def five_point_probe(bounds: Box2D, predicate: Callable[[float, float], Optional[bool]]) -> bool:
    """True iff the predicate holds at all four corners and the center.

    The predicate returns None for locations it cannot judge (outside the
    raster); those count as failing.
    """
    return all(predicate(x, y) is True for x, y in probe_locations(bounds))


def resolve_thresholds(measures: Sequence, config: ScreenConfig) -> ResolvedThresholds:
    """Turn "auto" settings into concrete cutoffs from the patch ensemble.

    Rule 1 auto: min_dim_factor x median point count, floored at 2.
    Rule 2 auto: 99th percentile of the |mean deviation| distribution plus
    mean_dev_tolerance (patches without a defined mean are ignored).
    """
    if isinstance(config.min_dim_points, str):
        counts = np.asarray([m.n_i for m in measures], dtype=np.float64)
        if counts.size == 0:
            raise ConfigError("cannot resolve auto thresholds without patches")
        min_points = max(2.0, config.min_dim_factor * float(np.median(counts)))
    else:
        min_points = float(config.min_dim_points)
    if isinstance(config.max_abs_mean_dev, str):
        mus = np.asarray(
            [abs(m.mu_i) for m in measures if np.isfinite(m.mu_i)], dtype=np.float64
        )
        if mus.size == 0:
            raise ConfigError("cannot resolve the mean-deviation cap: no defined means")
        max_dev = float(np.quantile(mus, 0.99)) + config.mean_dev_tolerance
    else:
        max_dev = float(config.max_abs_mean_dev)
    return ResolvedThresholds(min_dim_points=min_points, max_abs_mean_dev=max_dev)


def _land_cover(non_shaded: Optional[bool], non_vegetated: Optional[bool]) -> str:
    if non_shaded is None or non_vegetated is None:
        return COVER_UNLABELED
    if not non_shaded:
        return COVER_SHADED
    if not non_vegetated:
        return COVER_GRASS
    return COVER_BARE


def screen_patches(
    patches: Sequence,
    measures: Sequence,
    config: ScreenConfig = ScreenConfig(),
    ortho: Optional[Raster] = None,
    shadow_mask: Optional[ShadowMask] = None,
    thresholds: Optional[ResolvedThresholds] = None,
) -> tuple[list[PatchStatus], ResolvedThresholds]:
    """Apply the four rules to every patch; first failing rule wins.

    ``measures`` must align one-to-one with ``patches`` (same order).
    Shadow and vegetation rules need an orthoimage; requesting them
    without one raises MissingOrtho. A precomputed mask short-circuits
    the Otsu pass. Returns per-patch statuses plus the resolved cutoffs.
    """
    if len(patches) != len(measures):
        raise ValueError("patches and measures must align one-to-one")
    if config.use_vegetation and ortho is None:
        raise MissingOrtho("vegetation screening requested without an orthoimage")
    if config.use_shadow and shadow_mask is None:
        if ortho is None:
            raise MissingOrtho("shadow screening requested without an orthoimage")
        shadow_mask = compute_shadow_mask(ortho, config)
    if thresholds is None:
        thresholds = resolve_thresholds(measures, config)

    def non_shaded_at(x: float, y: float) -> Optional[bool]:
        s = shadow_mask.shadow_at(x, y)
        return None if s is None else not s

    def non_vegetated_at(x: float, y: float) -> Optional[bool]:
        row, col = ortho.xy_to_rowcol(x, y)
        if not ortho.in_range(row, col):
            return None
        r, g, b = (float(ortho.bands[i, int(row), int(col)]) for i in range(3))
        negi = compute_negi(r, g, b)
        # Undefined index (zero denominator) cannot attest vegetation.
        return bool(np.isnan(negi) or negi <= config.negi_threshold)

    statuses: list[PatchStatus] = []
    for patch, measure in zip(patches, measures):
        non_shaded = (
            five_point_probe(patch.bounds, non_shaded_at) if config.use_shadow else None
        )
        non_veg = (
            five_point_probe(patch.bounds, non_vegetated_at)
            if config.use_vegetation
            else None
        )
        reason = None
        if measure.n_i < thresholds.min_dim_points:
            reason = REASON_POINTS
        elif not (abs(measure.mu_i) <= thresholds.max_abs_mean_dev):
            reason = REASON_MEAN_DEV
        elif config.use_shadow and not non_shaded:
            reason = REASON_SHADOW
        elif config.use_vegetation and not non_veg:
            reason = REASON_VEGETATION
        statuses.append(
            PatchStatus(
                patch_id=patch.id,
                valid=reason is None,
                reason=reason,
                land_cover=_land_cover(non_shaded, non_veg),
            )
        )
    n_valid = sum(1 for s in statuses if s.valid)
    log.info("screening: %d of %d patches valid", n_valid, len(statuses))
    return statuses, thresholds
