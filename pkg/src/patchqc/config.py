"""Pipeline configuration: one TOML file drives every stage.

Sections mirror the stages ([paths], [ground], [segment], [segment_screen],
[patching], [screen], [measures], [report]) and default to the standard
parameter set. Parsing is strict: unknown keys, out-of-range values and a
wrong schema_version all raise ConfigError naming the offending field, and
everything is validated before any stage writes a file.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - version-dependent import
    import tomli as tomllib

from .errors import ConfigError
from .ground import GroundParams
from .patching import PatchingParams
from .screening import ScreenConfig
from .segmentation import ScreenThresholds, SegParams

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Paths:
    """Input/output locations; optional inputs stay None until needed."""

    als: Optional[Path] = None
    dim: Optional[Path] = None
    dsm: Optional[Path] = None
    ortho: Optional[Path] = None
    targets: Optional[Path] = None
    out_dir: Path = Path("out")


@dataclass(frozen=True)
class MeasureParams:
    rt_radius: float = 2.0

    def __post_init__(self):
        if not self.rt_radius > 0:
            raise ValueError("rt_radius must be > 0")


@dataclass(frozen=True)
class ReportParams:
    hist_bin_mu: float = 0.005
    hist_bin_sigma: float = 0.01
    map_mode: str = "abs"

    def __post_init__(self):
        if not (self.hist_bin_mu > 0 and self.hist_bin_sigma > 0):
            raise ValueError("histogram bin widths must be > 0")
        if self.map_mode not in ("abs", "signed"):
            raise ValueError("map_mode must be 'abs' or 'signed'")


@dataclass(frozen=True)
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    ground: GroundParams = field(default_factory=GroundParams)
    ground_use_labels: bool = False
    segment: SegParams = field(default_factory=SegParams)
    segment_screen: ScreenThresholds = field(default_factory=ScreenThresholds)
    normals_k: int = 10
    patching: PatchingParams = field(default_factory=PatchingParams)
    screen: ScreenConfig = field(default_factory=ScreenConfig)
    measures: MeasureParams = field(default_factory=MeasureParams)
    report: ReportParams = field(default_factory=ReportParams)

    def require_paths(self, *names: str) -> None:
        """Fail early when a stage's inputs are missing or nonexistent."""
        for name in names:
            value = getattr(self.paths, name)
            if value is None:
                raise ConfigError(f"paths.{name}: required by this command but not set")
            if name != "out_dir" and not Path(value).exists():
                raise ConfigError(f"paths.{name}: file not found: {value}")


def _build(section: str, cls, data: dict, *, path_fields: tuple[str, ...] = ()):
    """Construct a params dataclass from a TOML table, strictly."""
    known = set(cls.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"[{section}] unknown key: {sorted(unknown)[0]}")
    kwargs = dict(data)
    for name in path_fields:
        if name in kwargs and kwargs[name] is not None:
            kwargs[name] = Path(kwargs[name])
    try:
        return cls(**kwargs)
    except (ValueError, TypeError, ConfigError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def config_from_dict(raw: dict, base_dir: Optional[Path] = None) -> PipelineConfig:
    """Validate a parsed config mapping into a PipelineConfig.

    Relative paths resolve against ``base_dir`` (the config file's folder).
    """
    raw = dict(raw)
    version = raw.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version: expected {SCHEMA_VERSION}, got {version!r}"
        )
    known_sections = {
        "paths", "ground", "segment", "segment_screen", "patching",
        "screen", "measures", "report",
    }
    unknown = set(raw) - known_sections
    if unknown:
        raise ConfigError(f"unknown section: [{sorted(unknown)[0]}]")

    ground_raw = dict(raw.get("ground", {}))
    use_labels = ground_raw.pop("use_labels", False)
    if not isinstance(use_labels, bool):
        raise ConfigError("[ground] use_labels must be a boolean")
    seg_screen_raw = dict(raw.get("segment_screen", {}))
    normals_k = seg_screen_raw.pop("normals_k", 10)
    if not isinstance(normals_k, int) or normals_k < 3:
        raise ConfigError("[segment_screen] normals_k must be an integer >= 3")

    paths = _build(
        "paths", Paths, raw.get("paths", {}),
        path_fields=("als", "dim", "dsm", "ortho", "targets", "out_dir"),
    )
    if base_dir is not None:
        resolved = {}
        for name in ("als", "dim", "dsm", "ortho", "targets", "out_dir"):
            value = getattr(paths, name)
            if value is not None and not Path(value).is_absolute():
                value = base_dir / value
            resolved[name] = value
        paths = Paths(**resolved)

    return PipelineConfig(
        paths=paths,
        ground=_build("ground", GroundParams, ground_raw),
        ground_use_labels=use_labels,
        segment=_build("segment", SegParams, raw.get("segment", {})),
        segment_screen=_build("segment_screen", ScreenThresholds, seg_screen_raw),
        normals_k=normals_k,
        patching=_build("patching", PatchingParams, raw.get("patching", {})),
        screen=_build("screen", ScreenConfig, raw.get("screen", {})),
        measures=_build("measures", MeasureParams, raw.get("measures", {})),
        report=_build("report", ReportParams, raw.get("report", {})),
    )


def load_config(path) -> PipelineConfig:
    """Parse and validate a TOML config file."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path.name}: invalid TOML ({exc})") from None
    return config_from_dict(raw, base_dir=path.parent)
