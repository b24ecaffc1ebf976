"""File-level pipeline stages and the end-to-end run.

Every stage is a function from input files to output files, and ``run``
is nothing but the stages called in order on one config. That makes the
equivalence "manual stage composition == run" hold byte-for-byte, and it
keeps artifacts deterministic: rerunning an identical config reproduces
identical bytes (hashes recorded in manifest.json).

Artifact names inside the output directory are fixed:
    als_ground.xyz, als_seg.xyz, patches.json, patches_valid.json,
    report.json, patches_measured.csv, hist_*.csv/svg, patch_map.*,
    manifest.json
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io, report as report_mod
from .config import PipelineConfig
from .core import PointCloud, Raster
from .errors import ConfigError, PatchSetMismatch
from .ground import accept_ground_labels, classify_ground
from .measures import (
    EvaluationResult,
    crossverify_targets,
    evaluate,
    format_measures,
    load_targets,
)
from .patching import Patch, build_patches
from .screening import PatchStatus, ResolvedThresholds
from .segmentation import segment_cloud
from .synth import SceneSpec, generate_scene

log = logging.getLogger(__name__)

GROUND_FILE = "als_ground.xyz"
SEGMENT_FILE = "als_seg.xyz"
PATCHES_FILE = "patches.json"
VALID_FILE = "patches_valid.json"
REPORT_FILE = "report.json"
PER_PATCH_FILE = "patches_measured.csv"
MANIFEST_FILE = "manifest.json"


def _load_cloud(path: Path) -> tuple[PointCloud, Optional[str]]:
    if Path(path).suffix.lower() == ".las":
        return io.load_las(path), None
    return io.load_xyz(path)


def load_eval_source(path: Path):
    """A point cloud (.xyz/.las) or a raster surface model (anything else)."""
    path = Path(path)
    if path.suffix.lower() in (".xyz", ".las"):
        cloud, crs = _load_cloud(path)
        return cloud, crs
    return io.load_raster(path), None


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_ground(cfg: PipelineConfig, in_path=None, out_path=None) -> Path:
    """Ground labeling: reference cloud in, labeled cloud out."""
    in_path = Path(in_path) if in_path else cfg.paths.als
    if in_path is None:
        raise ConfigError("paths.als: required for the ground stage")
    out_path = Path(out_path) if out_path else cfg.paths.out_dir / GROUND_FILE
    cloud, crs = _load_cloud(in_path)
    if cfg.ground_use_labels:
        labeled = accept_ground_labels(cloud)
    else:
        labeled = classify_ground(cloud, cfg.ground)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    io.save_xyz(out_path, labeled, crs=crs)
    return out_path


def stage_segment(cfg: PipelineConfig, in_path=None, out_path=None) -> Path:
    """Planar segmentation of the ground-labeled cloud."""
    in_path = Path(in_path) if in_path else cfg.paths.out_dir / GROUND_FILE
    out_path = Path(out_path) if out_path else cfg.paths.out_dir / SEGMENT_FILE
    cloud, crs = io.load_xyz(in_path)
    segmented, _features = segment_cloud(cloud, cfg.segment, cfg.segment_screen)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    io.save_xyz(out_path, segmented, crs=crs)
    return out_path


def stage_patches(cfg: PipelineConfig, in_path=None, out_path=None) -> Path:
    """Patch extraction from the segmented cloud into patches.json."""
    in_path = Path(in_path) if in_path else cfg.paths.out_dir / SEGMENT_FILE
    out_path = Path(out_path) if out_path else cfg.paths.out_dir / PATCHES_FILE
    cloud, crs = io.load_xyz(in_path)
    patches = build_patches(cloud, cfg.patching)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    io.write_json(
        out_path,
        {
            "crs": crs,
            "patch_size": cfg.patching.patch_size,
            "patches": [p.to_dict() for p in patches],
        },
    )
    return out_path


def _read_patches_file(path: Path) -> dict:
    import json

    data = json.loads(Path(path).read_text(encoding="utf-8"))
    data["patches"] = [Patch.from_dict(d) for d in data.get("patches", [])]
    if "statuses" in data:
        data["statuses"] = [
            PatchStatus(s["patch_id"], s["valid"], s["reason"], s["land_cover"])
            for s in data["statuses"]
        ]
    return data


def _statuses_to_json(statuses: Sequence[PatchStatus]) -> list[dict]:
    return [
        {
            "patch_id": s.patch_id,
            "valid": s.valid,
            "reason": s.reason,
            "land_cover": s.land_cover,
        }
        for s in statuses
    ]


def stage_screen(cfg: PipelineConfig, patches_path=None, out_path=None) -> Path:
    """Pass-1 measures + the four screening rules -> patches_valid.json."""
    patches_path = Path(patches_path) if patches_path else cfg.paths.out_dir / PATCHES_FILE
    out_path = Path(out_path) if out_path else cfg.paths.out_dir / VALID_FILE
    if cfg.paths.dim is None:
        raise ConfigError("paths.dim: required for screening (rule 1/2 statistics)")
    data = _read_patches_file(patches_path)
    source, src_crs = load_eval_source(cfg.paths.dim)
    io.require_same_crs(data.get("crs"), src_crs)
    ortho = None
    if cfg.screen.use_shadow or cfg.screen.use_vegetation:
        if cfg.paths.ortho is None:
            raise ConfigError(
                "paths.ortho: required when shadow or vegetation screening is enabled"
            )
        ortho = io.load_raster(cfg.paths.ortho)
    result = evaluate(data["patches"], source, screen_config=cfg.screen, ortho=ortho)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    io.write_json(
        out_path,
        {
            "crs": data.get("crs"),
            "patch_size": data.get("patch_size", cfg.patching.patch_size),
            "patches": [p.to_dict() for p in data["patches"]],
            "statuses": _statuses_to_json(result.statuses),
            "thresholds": {
                "min_dim_points": result.thresholds.min_dim_points,
                "max_abs_mean_dev": result.thresholds.max_abs_mean_dev,
            },
            "rejections": result.rejections,
            "land_cover": result.land_cover,
        },
    )
    return out_path


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if np.isfinite(value) else None


def _report_payload(result: EvaluationResult, patch_size: float) -> dict:
    block = result.block
    payload = {
        "schema_version": 1,
        "patch_size": patch_size,
        "n_patches_total": len(result.measures),
        "m": block.m if block else len(result.valid_ids),
        "m_md": block.m_md if block else None,
        "std_md": block.std_md if block else None,
        "a_std": block.a_std if block else None,
        "formatted": format_measures(block) if block else None,
        "thresholds": (
            {
                "min_dim_points": result.thresholds.min_dim_points,
                "max_abs_mean_dev": result.thresholds.max_abs_mean_dev,
            }
            if result.thresholds
            else None
        ),
        "rejections": result.rejections,
        "land_cover": result.land_cover,
    }
    if block is None:
        payload["note"] = "fewer than 2 valid patches; block statistics undefined"
    return payload


def stage_evaluate(
    cfg: PipelineConfig,
    patches_path=None,
    source_path=None,
    report_path=None,
    per_patch_path=None,
) -> tuple[Path, Path]:
    """Final measures over the screened patch set -> report.json + CSV.

    ``patches_path`` may be a screened file (statuses decide validity) or
    a raw patches.json (every patch counts as valid then).
    """
    patches_path = Path(patches_path) if patches_path else cfg.paths.out_dir / VALID_FILE
    report_path = Path(report_path) if report_path else cfg.paths.out_dir / REPORT_FILE
    per_patch_path = (
        Path(per_patch_path) if per_patch_path else cfg.paths.out_dir / PER_PATCH_FILE
    )
    source_path = Path(source_path) if source_path else cfg.paths.dim
    if source_path is None:
        raise ConfigError("paths.dim: required for evaluation")
    data = _read_patches_file(patches_path)
    source, src_crs = load_eval_source(source_path)
    io.require_same_crs(data.get("crs"), src_crs)
    patches = data["patches"]
    statuses = data.get("statuses")
    if statuses is None:
        valid_ids = [p.id for p in patches]
    else:
        valid_ids = [s.patch_id for s in statuses if s.valid]
    result = evaluate(patches, source, patch_ids=valid_ids)
    if statuses is not None:
        # Keep the screening verdicts (reasons, land cover) in the artifacts.
        result.statuses = list(statuses)
        thr = data.get("thresholds")
        if thr:
            result.thresholds = ResolvedThresholds(
                min_dim_points=thr["min_dim_points"],
                max_abs_mean_dev=thr["max_abs_mean_dev"],
            )
        result.rejections = data.get("rejections", result.rejections)
        result.land_cover = data.get("land_cover", result.land_cover)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    io.write_json(report_path, _report_payload(result, data.get("patch_size", 2.0)))
    report_mod.write_per_patch_csv(per_patch_path, patches, result.measures, result.statuses)
    return report_path, per_patch_path


def stage_report(
    cfg: PipelineConfig,
    report_path=None,
    per_patch_path=None,
    out_dir=None,
    hist_bin_mu: Optional[float] = None,
    hist_bin_sigma: Optional[float] = None,
    map_mode: Optional[str] = None,
) -> list[Path]:
    """Histograms + patch map from the per-patch table."""
    import json

    report_path = Path(report_path) if report_path else cfg.paths.out_dir / REPORT_FILE
    per_patch_path = (
        Path(per_patch_path) if per_patch_path else cfg.paths.out_dir / PER_PATCH_FILE
    )
    out_dir = Path(out_dir) if out_dir else cfg.paths.out_dir
    info = json.loads(report_path.read_text(encoding="utf-8"))
    rows = report_mod.read_per_patch_csv(per_patch_path)
    return report_mod.render_report(
        rows,
        out_dir,
        patch_size=float(info.get("patch_size", 2.0)),
        hist_bin_mu=hist_bin_mu if hist_bin_mu else cfg.report.hist_bin_mu,
        hist_bin_sigma=hist_bin_sigma if hist_bin_sigma else cfg.report.hist_bin_sigma,
        map_mode=map_mode if map_mode else cfg.report.map_mode,
    )


def write_manifest(out_dir: Path, artifacts: Sequence[Path]) -> Path:
    out_dir = Path(out_dir)
    entries = {}
    for artifact in artifacts:
        artifact = Path(artifact)
        try:
            rel = artifact.relative_to(out_dir)
        except ValueError:
            rel = artifact
        entries[str(rel)] = io.file_sha256(artifact)
    manifest = out_dir / MANIFEST_FILE
    io.write_json(manifest, {"generator": "patch-qc", "artifacts": entries})
    return manifest


def run(cfg: PipelineConfig) -> list[Path]:
    """The full pipeline on one config; returns every artifact written."""
    cfg.require_paths("als", "dim")
    if (cfg.screen.use_shadow or cfg.screen.use_vegetation) and cfg.paths.ortho is None:
        raise ConfigError(
            "paths.ortho: required when shadow or vegetation screening is enabled"
        )
    if cfg.paths.ortho is not None:
        cfg.require_paths("ortho")
    out_dir = cfg.paths.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = [stage_ground(cfg)]
    artifacts.append(stage_segment(cfg))
    artifacts.append(stage_patches(cfg))
    artifacts.append(stage_screen(cfg))
    artifacts.extend(stage_evaluate(cfg))
    artifacts.extend(stage_report(cfg))
    # Sidecars written alongside rasters are not produced here; hash what
    # the stages reported plus nothing else, in listed order.
    artifacts.append(write_manifest(out_dir, artifacts))
    return artifacts


# ---------------------------------------------------------------------------
# Comparison over one shared patch set
# ---------------------------------------------------------------------------

def compare_runs(
    patches_path,
    sources: Sequence[tuple[str, Path]],
    out_dir,
) -> dict:
    """Evaluate several sources over one persisted, already-screened patch set.

    Every source is measured on exactly the valid patches recorded in
    ``patches_path``, so the runs share amounts and locations; the result
    is a compact table plus per-patch paired differences against the first
    source. Two sources minimum.
    """
    if len(sources) < 2:
        raise PatchSetMismatch("compare needs at least 2 sources")
    data = _read_patches_file(Path(patches_path))
    patches = data["patches"]
    statuses = data.get("statuses")
    if statuses is None:
        valid_ids = [p.id for p in patches]
    else:
        valid_ids = [s.patch_id for s in statuses if s.valid]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    runs = []
    per_patch: dict[str, dict[int, tuple[float, float]]] = {}
    id_sets = []
    for name, path in sources:
        source, src_crs = load_eval_source(Path(path))
        io.require_same_crs(data.get("crs"), src_crs)
        result = evaluate(patches, source, patch_ids=valid_ids)
        if result.block is None:
            raise PatchSetMismatch(f"run {name!r}: fewer than 2 valid patches")
        id_sets.append(tuple(m.patch_id for m in result.block.per_patch))
        per_patch[name] = {m.patch_id: (m.mu_i, m.sigma_i) for m in result.block.per_patch}
        runs.append(
            {
                "name": name,
                "m": result.block.m,
                "m_md": result.block.m_md,
                "std_md": result.block.std_md,
                "a_std": result.block.a_std,
                "formatted": format_measures(result.block),
            }
        )
    if len(set(id_sets)) != 1:
        raise PatchSetMismatch("runs ended up on different patch id sets")

    base_name = runs[0]["name"]
    diff_rows = ["id," + ",".join(
        f"mu_{name},sigma_{name},d_mu_{name},d_sigma_{name}"
        for name, _ in sources[1:]
    )]
    for pid in id_sets[0]:
        mu0, s0 = per_patch[base_name][pid]
        cells = []
        for name, _ in sources[1:]:
            mu, s = per_patch[name][pid]
            cells.append(f"{mu:.6f},{s:.6f},{mu - mu0:.6f},{s - s0:.6f}")
        diff_rows.append(f"{pid}," + ",".join(cells))
    diff_path = out_dir / "compare_per_patch.csv"
    diff_path.write_text("\n".join(diff_rows) + "\n", encoding="utf-8")

    table = {
        "base": base_name,
        "m": runs[0]["m"],
        "runs": runs,
        "differences": {
            r["name"]: {
                "d_m_md": r["m_md"] - runs[0]["m_md"],
                "d_std_md": r["std_md"] - runs[0]["std_md"],
                "d_a_std": r["a_std"] - runs[0]["a_std"],
            }
            for r in runs[1:]
        },
    }
    io.write_json(out_dir / "compare.json", table)
    return table


def format_compare_table(table: dict) -> str:
    """Text table, one run per row, the three measures in one cell."""
    width = max(len(r["name"]) for r in table["runs"])
    lines = [f"{'run'.ljust(width)}  m      M_MD; STD_MD; A_STD"]
    for r in table["runs"]:
        lines.append(f"{r['name'].ljust(width)}  {r['m']:<6d} {r['formatted']}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Synthetic scene + target verification entry points
# ---------------------------------------------------------------------------

def run_synth(spec: SceneSpec, out_dir) -> list[Path]:
    """Generate a scene and persist als.xyz, dim.xyz, ortho.bin, truth.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    als, dim, ortho, truth = generate_scene(spec)
    crs = "synthetic-local"
    paths = [out_dir / "als.xyz", out_dir / "dim.xyz", out_dir / "ortho.bin",
             out_dir / "truth.json"]
    io.save_xyz(paths[0], als, crs=crs)
    io.save_xyz(paths[1], dim, crs=crs)
    io.save_raster(paths[2], ortho)
    io.write_json(paths[3], truth.spec.to_dict())
    return paths


def run_verify_targets(als_path, targets_path, radius: float, out_path) -> dict:
    als, _crs = _load_cloud(Path(als_path))
    targets = load_targets(targets_path)
    verification = crossverify_targets(targets, als, radius=radius)
    payload = {
        "radius": radius,
        "mu": verification.mu,
        "sigma": verification.sigma,
        "mu_initial": verification.mu_initial,
        "sigma_initial": verification.sigma_initial,
        "n_accepted": verification.n_accepted,
        "n_rejected": verification.n_rejected,
        "n_excluded": verification.n_excluded,
        "targets": [
            {
                "id": r.id,
                "x": r.x,
                "y": r.y,
                "z": r.z,
                "residual": r.residual,
                "status": r.status,
            }
            for r in verification.results
        ],
    }
    io.write_json(Path(out_path), payload)
    return payload
