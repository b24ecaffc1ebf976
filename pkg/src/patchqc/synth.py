"""Synthetic paired scenes with known truth, and an IDW surface-model grid.

A scene is a flat base surface (optionally with raised platforms) sampled
by two point clouds: a low-noise reference cloud and a denser, noisier
evaluated cloud that additionally carries a systematic bias field and
optional "change" objects. An RGB orthoimage paints vegetation and shadow
polygons over a gray background. Everything is reproducible from one seed
of a fixed, portable generator (PCG64), and the truth object can be
queried at any location, which is what the acceptance oracles build on.

Scene coordinates start at (0, 0); the extent spans [0, w] x [0, h].
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree

from .core import Box2D, PointCloud, Raster, fit_plane
from .errors import EmptyInput, InvalidSpec

log = logging.getLogger(__name__)

BACKGROUND_RGB = (200, 200, 200)  # luminance 200
VEGETATION_RGB = (100, 200, 100)  # nEGI = 200/600 = 0.333
SHADOW_RGB = (40, 40, 40)  # luminance 40
DSM_NODATA = -9999.0


@dataclass(frozen=True)
class Disc:
    """Circular footprint."""

    cx: float
    cy: float
    radius: float

    def contains(self, x, y):
        return (np.asarray(x) - self.cx) ** 2 + (np.asarray(y) - self.cy) ** 2 <= self.radius**2


Footprint = Union[Box2D, Disc]


def footprint_contains(fp: Footprint, x, y):
    return fp.contains(x, y)


def footprint_to_dict(fp: Footprint) -> dict:
    if isinstance(fp, Disc):
        return {"kind": "disc", "cx": fp.cx, "cy": fp.cy, "radius": fp.radius}
    return {"kind": "box", "xmin": fp.xmin, "ymin": fp.ymin, "xmax": fp.xmax, "ymax": fp.ymax}


def footprint_from_dict(d: dict) -> Footprint:
    if d["kind"] == "disc":
        return Disc(d["cx"], d["cy"], d["radius"])
    if d["kind"] == "box":
        return Box2D(d["xmin"], d["ymin"], d["xmax"], d["ymax"])
    raise InvalidSpec(f"unknown footprint kind {d.get('kind')!r}")


@dataclass(frozen=True)
class Step:
    """A platform raised (or sunk) by dz, present in both clouds."""

    footprint: Footprint
    dz: float


@dataclass(frozen=True)
class Hole:
    """A data gap: points inside are dropped from the targeted cloud(s)."""

    footprint: Footprint
    target: str = "both"  # "als" | "dim" | "both"


@dataclass(frozen=True)
class Change:
    """An object present only in the evaluated cloud (a 'change')."""

    footprint: Footprint
    dz: float


@dataclass(frozen=True)
class BiasField:
    """Systematic vertical offset of the evaluated cloud.

    kinds: "constant" (value everywhere); "gradient" (0 at x = 0 rising
    linearly to value at x = extent width); "quadrant" (value inside one
    quadrant, 0 elsewhere); "radial" (dome: value at the center falling
    quadratically to 0 at the corners).
    """

    kind: str = "constant"
    value: float = 0.0
    quadrant: str = "sw"

    def __post_init__(self):
        if self.kind not in ("constant", "gradient", "quadrant", "radial"):
            raise InvalidSpec(f"unknown bias field kind {self.kind!r}")
        if self.quadrant not in ("sw", "se", "nw", "ne"):
            raise InvalidSpec(f"unknown quadrant {self.quadrant!r}")

    def at(self, x, y, extent: tuple[float, float]):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        w, h = extent
        if self.kind == "constant":
            return np.full_like(x, self.value)
        if self.kind == "gradient":
            return self.value * x / w
        if self.kind == "quadrant":
            west = x < w / 2
            south = y < h / 2
            sel = {
                "sw": west & south,
                "se": ~west & south,
                "nw": west & ~south,
                "ne": ~west & ~south,
            }[self.quadrant]
            return np.where(sel, self.value, 0.0)
        # radial dome, zero at the extent corners
        r2 = (x - w / 2) ** 2 + (y - h / 2) ** 2
        r2_max = (w / 2) ** 2 + (h / 2) ** 2
        return self.value * (1.0 - r2 / r2_max)


@dataclass(frozen=True)
class SceneSpec:
    """Full description of a synthetic scene (serializable)."""

    extent: tuple[float, float] = (100.0, 100.0)
    als_density: float = 8.0
    dim_density: float = 100.0
    als_noise: float = 0.02
    dim_noise: float = 0.09
    bias: BiasField = field(default_factory=BiasField)
    steps: tuple[Step, ...] = ()
    holes: tuple[Hole, ...] = ()
    changes: tuple[Change, ...] = ()
    vegetation: tuple[Footprint, ...] = ()
    shadow: tuple[Footprint, ...] = ()
    ortho_cell: float = 0.1
    ortho_margin: float = 1.0
    seed: int = 1
    rng: str = "pcg64"

    def __post_init__(self):
        if not (self.extent[0] > 2.0 and self.extent[1] > 2.0):
            raise InvalidSpec("extent must exceed the evaluation patch footprint (2 m)")
        if not (self.als_density > 0 and self.dim_density > 0):
            raise InvalidSpec("point densities must be > 0")
        if self.als_noise < 0 or self.dim_noise < 0:
            raise InvalidSpec("noise levels must be >= 0")
        if not self.ortho_cell > 0:
            raise InvalidSpec("ortho_cell must be > 0")
        if self.ortho_margin < 0:
            raise InvalidSpec("ortho_margin must be >= 0")
        if self.rng != "pcg64":
            raise InvalidSpec(f"unsupported generator {self.rng!r}; scenes are pinned to pcg64")
        for hole in self.holes:
            if hole.target not in ("als", "dim", "both"):
                raise InvalidSpec(f"unknown hole target {hole.target!r}")

    def to_dict(self) -> dict:
        return {
            "extent": list(self.extent),
            "als_density": self.als_density,
            "dim_density": self.dim_density,
            "als_noise": self.als_noise,
            "dim_noise": self.dim_noise,
            "bias": {"kind": self.bias.kind, "value": self.bias.value, "quadrant": self.bias.quadrant},
            "steps": [{"footprint": footprint_to_dict(s.footprint), "dz": s.dz} for s in self.steps],
            "holes": [
                {"footprint": footprint_to_dict(h.footprint), "target": h.target}
                for h in self.holes
            ],
            "changes": [
                {"footprint": footprint_to_dict(c.footprint), "dz": c.dz} for c in self.changes
            ],
            "vegetation": [footprint_to_dict(f) for f in self.vegetation],
            "shadow": [footprint_to_dict(f) for f in self.shadow],
            "ortho_cell": self.ortho_cell,
            "ortho_margin": self.ortho_margin,
            "seed": self.seed,
            "rng": self.rng,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        try:
            bias = d.get("bias", {})
            return cls(
                extent=tuple(d.get("extent", (100.0, 100.0))),
                als_density=d.get("als_density", 8.0),
                dim_density=d.get("dim_density", 100.0),
                als_noise=d.get("als_noise", 0.02),
                dim_noise=d.get("dim_noise", 0.09),
                bias=BiasField(
                    kind=bias.get("kind", "constant"),
                    value=bias.get("value", 0.0),
                    quadrant=bias.get("quadrant", "sw"),
                ),
                steps=tuple(
                    Step(footprint_from_dict(s["footprint"]), s["dz"])
                    for s in d.get("steps", ())
                ),
                holes=tuple(
                    Hole(footprint_from_dict(h["footprint"]), h.get("target", "both"))
                    for h in d.get("holes", ())
                ),
                changes=tuple(
                    Change(footprint_from_dict(c["footprint"]), c["dz"])
                    for c in d.get("changes", ())
                ),
                vegetation=tuple(footprint_from_dict(f) for f in d.get("vegetation", ())),
                shadow=tuple(footprint_from_dict(f) for f in d.get("shadow", ())),
                ortho_cell=d.get("ortho_cell", 0.1),
                ortho_margin=d.get("ortho_margin", 1.0),
                seed=int(d.get("seed", 1)),
                rng=d.get("rng", "pcg64"),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidSpec(f"malformed scene spec: {exc}") from None


class SceneTruth:
    """Ground truth of a generated scene, queryable anywhere in the extent."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec

    def base_z(self, x, y):
        """Terrain height: flat base plus any step platforms."""
        z = np.zeros_like(np.asarray(x, dtype=np.float64))
        for step in self.spec.steps:
            z = z + np.where(footprint_contains(step.footprint, x, y), step.dz, 0.0)
        return z

    def bias_at(self, x, y):
        """Systematic evaluated-minus-reference offset (the bias field only)."""
        return self.spec.bias.at(x, y, self.spec.extent)

    def change_at(self, x, y):
        """Extra offset from change objects (evaluated cloud only)."""
        z = np.zeros_like(np.asarray(x, dtype=np.float64))
        for change in self.spec.changes:
            z = z + np.where(footprint_contains(change.footprint, x, y), change.dz, 0.0)
        return z

    def in_hole(self, x, y, cloud: str):
        mask = np.zeros_like(np.asarray(x, dtype=np.float64), dtype=bool)
        for hole in self.spec.holes:
            if hole.target in (cloud, "both"):
                mask |= footprint_contains(hole.footprint, x, y)
        return mask

    def is_vegetated(self, x, y):
        mask = np.zeros_like(np.asarray(x, dtype=np.float64), dtype=bool)
        for fp in self.spec.vegetation:
            mask |= footprint_contains(fp, x, y)
        return mask

    def is_shadowed(self, x, y):
        mask = np.zeros_like(np.asarray(x, dtype=np.float64), dtype=bool)
        for fp in self.spec.shadow:
            mask |= footprint_contains(fp, x, y)
        return mask


def _paint(bands: np.ndarray, mask: np.ndarray, rgb: tuple[int, int, int]) -> None:
    for i in range(3):
        bands[i][mask] = rgb[i]


def generate_scene(spec: SceneSpec) -> tuple[PointCloud, PointCloud, Raster, SceneTruth]:
    """Build (reference cloud, evaluated cloud, orthoimage, truth).

    Point positions are uniform over the extent; counts are density x
    area rounded. The draw order (reference xy, reference noise, evaluated
    xy, evaluated noise) is fixed, so a given seed always produces the
    same clouds bit-for-bit. Noise draws happen even at zero noise, which
    keeps scenes comparable across noise settings.
    """
    truth = SceneTruth(spec)
    w, h = spec.extent
    area = w * h
    rng = np.random.Generator(np.random.PCG64(spec.seed))

    n_als = int(round(spec.als_density * area))
    n_dim = int(round(spec.dim_density * area))
    als_xy = rng.uniform(size=(n_als, 2)) * (w, h)
    als_eps = rng.standard_normal(n_als) * spec.als_noise
    dim_xy = rng.uniform(size=(n_dim, 2)) * (w, h)
    dim_eps = rng.standard_normal(n_dim) * spec.dim_noise

    als_z = truth.base_z(als_xy[:, 0], als_xy[:, 1]) + als_eps
    dim_z = (
        truth.base_z(dim_xy[:, 0], dim_xy[:, 1])
        + truth.bias_at(dim_xy[:, 0], dim_xy[:, 1])
        + truth.change_at(dim_xy[:, 0], dim_xy[:, 1])
        + dim_eps
    )
    als_keep = ~truth.in_hole(als_xy[:, 0], als_xy[:, 1], "als")
    dim_keep = ~truth.in_hole(dim_xy[:, 0], dim_xy[:, 1], "dim")
    if not als_keep.any() or not dim_keep.any():
        raise InvalidSpec("holes removed every point of a cloud")
    als = PointCloud(np.column_stack([als_xy[als_keep], als_z[als_keep]]))
    dim = PointCloud(np.column_stack([dim_xy[dim_keep], dim_z[dim_keep]]))

    margin = spec.ortho_margin
    cell = spec.ortho_cell
    width = int(math.ceil((w + 2 * margin) / cell))
    height = int(math.ceil((h + 2 * margin) / cell))
    bands = np.empty((3, height, width), dtype=np.uint8)
    for i, v in enumerate(BACKGROUND_RGB):
        bands[i].fill(v)
    ortho = Raster(origin=(-margin, h + margin), cell_size=cell, bands=bands)
    cx, cy = ortho.cell_centers()
    for fp in spec.vegetation:
        _paint(bands, footprint_contains(fp, cx, cy), VEGETATION_RGB)
    for fp in spec.shadow:
        _paint(bands, footprint_contains(fp, cx, cy), SHADOW_RGB)

    log.info("scene: %d reference + %d evaluated points, ortho %dx%d",
             len(als), len(dim), width, height)
    return als, dim, ortho, truth


def idw_dsm(
    cloud: PointCloud,
    cell: float,
    power: float = 2.0,
    radius: Optional[float] = None,
) -> Raster:
    """Inverse-distance-weighted height grid over the cloud's extent.

    Cell height = sum(w_i z_i) / sum(w_i) over points within ``radius`` of
    the cell center (planimetric), w_i = 1 / d_i^power. A point closer
    than 1e-9 m to the center contributes its height exactly; cells with
    no points in range become nodata. Default radius is three times the
    mean point spacing.
    """
    if len(cloud) == 0:
        raise EmptyInput("cannot interpolate an empty point cloud")
    if not cell > 0:
        raise ValueError("cell must be > 0")
    b = cloud.bounds
    if radius is None:
        spacing = math.sqrt(max(b.xmax - b.xmin, cell) * max(b.ymax - b.ymin, cell) / len(cloud))
        radius = 3.0 * spacing
    width = max(1, int(math.ceil((b.xmax - b.xmin) / cell)))
    height = max(1, int(math.ceil((b.ymax - b.ymin) / cell)))
    origin = (b.xmin, b.ymax)
    cols = np.arange(width)
    rows = np.arange(height)
    gx = origin[0] + (cols + 0.5) * cell
    gy = origin[1] - (rows + 0.5) * cell
    centers = np.column_stack([np.tile(gx, height), np.repeat(gy, width)])

    tree = cKDTree(cloud.points[:, :2])
    neighborhoods = tree.query_ball_point(centers, r=radius, workers=1)
    z = cloud.z
    out = np.full(height * width, DSM_NODATA)
    for i, idx in enumerate(neighborhoods):
        if not idx:
            continue
        idx = np.sort(np.asarray(idx, dtype=np.intp))  # canonical summation order
        d = np.hypot(
            cloud.points[idx, 0] - centers[i, 0], cloud.points[idx, 1] - centers[i, 1]
        )
        exact = d < 1e-9
        if exact.any():
            out[i] = z[idx[exact]].mean()
        else:
            wgt = d**-power
            out[i] = float(wgt @ z[idx] / wgt.sum())
    grid = out.reshape(height, width)
    n_filled = int((grid != DSM_NODATA).sum())
    log.info("idw: %d of %d cells filled (radius %.3f m)", n_filled, grid.size, radius)
    return Raster(origin=origin, cell_size=cell, bands=grid[np.newaxis], nodata=DSM_NODATA)


@dataclass(frozen=True)
class OracleMeasures:
    """Expected block measures with 3-standard-error tolerances."""

    m_md: float
    m_md_tol: float
    a_std: float
    a_std_tol: float


def oracle_measures(
    truth: SceneTruth,
    patches: Sequence,
    n_sim: int = 200,
    seed: int = 987654321,
    dim_factor: int = 10,
) -> OracleMeasures:
    """Expected (M_MD, A_STD) for a patch set on this scene.

    M_MD: mean of the bias field at the patch centers; its tolerance
    propagates evaluated-point noise and reference plane-fit noise through
    the patch means. A_STD: root of the expected per-patch deviation
    variance, estimated by direct Monte-Carlo simulation of the plane-fit
    pipeline (reference points at actual count, evaluated points at
    ``dim_factor`` x the expected count to damp trial noise).
    """
    spec = truth.spec
    m = len(patches)
    if m == 0:
        raise InvalidSpec("oracle needs at least one patch")
    centers = np.asarray([p.bounds.center for p in patches])
    m_md = float(np.mean(truth.bias_at(centers[:, 0], centers[:, 1])))

    area = float(np.median([p.bounds.width * p.bounds.height for p in patches]))
    side = math.sqrt(area)
    n_als = int(np.median([p.n_als for p in patches]))
    n_dim = max(2, int(round(spec.dim_density * area)))
    se_mu = math.sqrt(spec.dim_noise**2 / n_dim + spec.als_noise**2 / n_als)
    m_md_tol = 3.0 * se_mu / math.sqrt(m)

    rng = np.random.Generator(np.random.PCG64(seed))
    n_dim_sim = max(2, dim_factor * n_dim)
    sigma2 = np.empty(n_sim)
    for t in range(n_sim):
        als_xy = rng.uniform(0.0, side, size=(n_als, 2))
        als_z = rng.standard_normal(n_als) * spec.als_noise
        plane = fit_plane(np.column_stack([als_xy, als_z]))
        dim_xy = rng.uniform(0.0, side, size=(n_dim_sim, 2))
        dim_z = rng.standard_normal(n_dim_sim) * spec.dim_noise
        dh = dim_z - plane.z_at(dim_xy[:, 0], dim_xy[:, 1])
        sigma2[t] = dh.var(ddof=1)
    a_std = float(np.sqrt(sigma2.mean()))
    if a_std > 0:
        se_mean_sigma2 = float(sigma2.std(ddof=1)) / math.sqrt(n_sim)
        a_std_tol = 3.0 * se_mean_sigma2 / (2.0 * a_std)  # delta method for sqrt
    else:
        a_std_tol = 0.0
    return OracleMeasures(m_md=m_md, m_md_tol=m_md_tol, a_std=a_std, a_std_tol=a_std_tol)
