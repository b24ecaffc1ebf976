"""Command-line interface: one subcommand per pipeline stage plus run/compare.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
error. On failure a single machine-readable JSON line goes to stderr:
{"error": {"type": ..., "message": ..., "command": ...}}.

The --threads flag is accepted everywhere and validated; results are
independent of it by construction (deterministic sorted reductions), so
any value reproduces the single-thread output exactly.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import PipelineConfig, load_config
from .errors import ConfigError, DataError, PatchQCError
from .ground import GroundParams
from .patching import PatchingParams
from .segmentation import SegParams
from .synth import SceneSpec

log = logging.getLogger("patchqc")


def _common(parser: argparse.ArgumentParser, seed: bool = False) -> None:
    parser.add_argument("--config", help="TOML pipeline configuration")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap (output is identical for any value)")
    parser.add_argument("--out-dir", help="output directory (overrides config)")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v progress, -vv debug")
    if seed:
        parser.add_argument("--seed", type=int, help="override the scene seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patch-qc",
        description="Patch-based vertical quality control of dense-matching "
                    "point clouds and surface models against a laser-scanning reference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ground", help="label ground / non-ground points")
    _common(p)
    p.add_argument("--in", dest="in_path", required=True, help="reference cloud (.xyz/.las)")
    p.add_argument("--out", dest="out_path", help="labeled cloud (default out/als_ground.xyz)")
    p.add_argument("--cell", type=float, help="seeding grid size, m")
    p.add_argument("--max-dist", type=float, help="point-to-facet bound, m")
    p.add_argument("--max-angle", type=float, help="point-to-facet angle bound, deg")
    p.add_argument("--iterations", type=int, help="densification rounds")
    p.add_argument("--use-labels", action="store_true",
                   help="trust the class column already present on the input")

    p = sub.add_parser("segment", help="grow planar segments from ground points")
    _common(p)
    p.add_argument("--in", dest="in_path", required=True, help="ground-labeled cloud")
    p.add_argument("--out", dest="out_path", help="segmented cloud (default out/als_seg.xyz)")
    p.add_argument("--radius", type=float, help="growing neighborhood radius, m")
    p.add_argument("--max-dist", type=float, help="point-to-plane bound, m")

    p = sub.add_parser("patches", help="carve square patches from segments")
    _common(p)
    p.add_argument("--in", dest="in_path", required=True, help="segmented cloud")
    p.add_argument("--out", dest="out_path", help="patch file (default out/patches.json)")
    p.add_argument("--cell", type=float, help="occupancy cell size, m")
    p.add_argument("--patch-cells", type=int, help="patch edge length in cells")
    p.add_argument("--stride", type=int, help="candidate scan stride, cells")
    p.add_argument("--min-als", type=int, help="reference points required per patch")

    p = sub.add_parser("screen", help="apply the four patch screening rules")
    _common(p)
    p.add_argument("--patches", required=True, help="patches.json from the patches stage")
    p.add_argument("--dim", required=True, help="evaluated cloud or surface model")
    p.add_argument("--ortho", help="RGB orthoimage (needed for shadow/vegetation rules)")
    p.add_argument("--out", dest="out_path", help="default out/patches_valid.json")

    p = sub.add_parser("evaluate", help="compute patch and block quality measures")
    _common(p)
    p.add_argument("--patches", required=True, help="patches_valid.json (or raw patches.json)")
    p.add_argument("--dim", required=True, help="evaluated cloud (.xyz/.las) or raster DSM")
    p.add_argument("--out", dest="out_path", help="default out/report.json")
    p.add_argument("--per-patch", dest="per_patch", help="default out/patches_measured.csv")

    p = sub.add_parser("report", help="histograms and patch map from a finished evaluation")
    _common(p)
    p.add_argument("--report", required=True, help="report.json")
    p.add_argument("--per-patch", dest="per_patch", required=True, help="patches_measured.csv")
    p.add_argument("--hist-bin", type=float, help="mean-deviation histogram bin width, m")
    p.add_argument("--hist-bin-sigma", type=float, help="spread histogram bin width, m")
    p.add_argument("--map-mode", choices=("abs", "signed"), help="patch map coloring")

    p = sub.add_parser("synth", help="generate a synthetic scene with known truth")
    _common(p, seed=True)
    p.add_argument("--spec", required=True, help="scene spec JSON")

    p = sub.add_parser("verify-targets", help="cross-check surveyed targets against the reference")
    _common(p)
    p.add_argument("--als", required=True, help="reference cloud")
    p.add_argument("--targets", required=True, help="text file: id x y z per line")
    p.add_argument("--radius", type=float, default=2.0, help="local plane radius, m")
    p.add_argument("--out", dest="out_path", help="default out/targets_report.json")

    p = sub.add_parser("run", help="full pipeline from one config file")
    _common(p)

    p = sub.add_parser("compare", help="evaluate several sources over one shared patch set")
    _common(p)
    p.add_argument("--patches", required=True, help="screened patch set (patches_valid.json)")
    p.add_argument("--source", action="append", default=[], metavar="NAME=PATH",
                   help="a named cloud/DSM to evaluate; repeat for each run (>= 2)")

    return parser


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if getattr(args, "out_dir", None):
        cfg = dataclasses.replace(
            cfg, paths=dataclasses.replace(cfg.paths, out_dir=Path(args.out_dir))
        )
    return cfg


def _replace_params(section: str, params, **overrides):
    """Apply non-None CLI overrides onto a params dataclass."""
    changes = {k: v for k, v in overrides.items() if v is not None}
    if not changes:
        return params
    try:
        return dataclasses.replace(params, **changes)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def _cmd_ground(args) -> int:
    cfg = _load_cfg(args)
    ground = _replace_params(
        "ground", cfg.ground,
        initial_cell=args.cell, max_dist=args.max_dist,
        max_angle=args.max_angle, iterations=args.iterations,
    )
    cfg = dataclasses.replace(cfg, ground=ground,
                              ground_use_labels=args.use_labels or cfg.ground_use_labels)
    out = pipeline.stage_ground(cfg, in_path=args.in_path, out_path=args.out_path)
    print(out)
    return 0


def _cmd_segment(args) -> int:
    cfg = _load_cfg(args)
    seg = _replace_params("segment", cfg.segment,
                          grow_radius=args.radius, max_plane_dist=args.max_dist)
    cfg = dataclasses.replace(cfg, segment=seg)
    out = pipeline.stage_segment(cfg, in_path=args.in_path, out_path=args.out_path)
    print(out)
    return 0


def _cmd_patches(args) -> int:
    cfg = _load_cfg(args)
    patching = _replace_params(
        "patching", cfg.patching,
        cell=args.cell, patch_cells=args.patch_cells,
        stride=args.stride, min_als_points=args.min_als,
    )
    cfg = dataclasses.replace(cfg, patching=patching)
    out = pipeline.stage_patches(cfg, in_path=args.in_path, out_path=args.out_path)
    print(out)
    return 0


def _cmd_screen(args) -> int:
    cfg = _load_cfg(args)
    paths = dataclasses.replace(
        cfg.paths,
        dim=Path(args.dim),
        ortho=Path(args.ortho) if args.ortho else cfg.paths.ortho,
    )
    cfg = dataclasses.replace(cfg, paths=paths)
    out = pipeline.stage_screen(cfg, patches_path=args.patches, out_path=args.out_path)
    print(out)
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    report_path, per_patch = pipeline.stage_evaluate(
        cfg,
        patches_path=args.patches,
        source_path=args.dim,
        report_path=args.out_path,
        per_patch_path=args.per_patch,
    )
    info = json.loads(Path(report_path).read_text(encoding="utf-8"))
    if info.get("formatted"):
        print(f"m = {info['m']}  M_MD; STD_MD; A_STD = {info['formatted']}")
    else:
        print(f"m = {info['m']}  (block statistics undefined)")
    print(report_path)
    print(per_patch)
    return 0


def _cmd_report(args) -> int:
    cfg = _load_cfg(args)
    written = pipeline.stage_report(
        cfg,
        report_path=args.report,
        per_patch_path=args.per_patch,
        out_dir=args.out_dir,
        hist_bin_mu=args.hist_bin,
        hist_bin_sigma=args.hist_bin_sigma,
        map_mode=args.map_mode,
    )
    for path in written:
        print(path)
    return 0


def _cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    raw = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    spec = SceneSpec.from_dict(raw)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    for path in pipeline.run_synth(spec, args.out_dir or cfg.paths.out_dir):
        print(path)
    return 0


def _cmd_verify_targets(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out_path) if args.out_path else cfg.paths.out_dir / "targets_report.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = pipeline.run_verify_targets(args.als, args.targets, args.radius, out)
    print(
        f"targets: {payload['n_accepted']} accepted, {payload['n_rejected']} rejected, "
        f"{payload['n_excluded']} excluded; mu = {payload['mu']:.4f} m, "
        f"sigma = {payload['sigma']:.4f} m"
    )
    print(out)
    return 0


def _cmd_run(args) -> int:
    if not args.config:
        raise ConfigError("run requires --config")
    cfg = _load_cfg(args)
    for path in pipeline.run(cfg):
        print(path)
    return 0


def _cmd_compare(args) -> int:
    cfg = _load_cfg(args)
    sources = []
    for item in args.source:
        if "=" not in item:
            raise ConfigError(f"--source must be NAME=PATH, got {item!r}")
        name, _, path = item.partition("=")
        sources.append((name, Path(path)))
    if len(sources) < 2:
        raise ConfigError("compare needs at least two --source entries")
    table = pipeline.compare_runs(args.patches, sources, cfg.paths.out_dir)
    print(pipeline.format_compare_table(table))
    return 0


_COMMANDS = {
    "ground": _cmd_ground,
    "segment": _cmd_segment,
    "patches": _cmd_patches,
    "screen": _cmd_screen,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
    "synth": _cmd_synth,
    "verify-targets": _cmd_verify_targets,
    "run": _cmd_run,
    "compare": _cmd_compare,
}


def _fail(command: str, exc: BaseException, code: int) -> int:
    payload = {"error": {"type": type(exc).__name__, "message": str(exc), "command": command}}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1 or args.threads > 256:
        return _fail(args.command, ConfigError("--threads must be in [1, 256]"), 2)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail(args.command, exc, 2)
    except DataError as exc:
        return _fail(args.command, exc, 3)
    except PatchQCError as exc:
        return _fail(args.command, exc, 4)
    except OSError as exc:
        return _fail(args.command, exc, 4)


if __name__ == "__main__":
    sys.exit(main())
