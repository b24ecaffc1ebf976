"""Report artifacts: deviation histograms, patch maps, and their exports.

Histograms carry a normal overlay estimated from the same values and
scaled by N x bin_width so its area matches the bar mass; the display
interval clips to the empirical 1%/99% quantiles. Patch maps color each
valid patch by |mean deviation| on a blue-to-red ramp (abs mode) or by
sign (signed mode).

Every writer is byte-deterministic: fixed float formats, sorted ordering,
no timestamps, hand-assembled SVG.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import Box2D
from .errors import TooFewValues
from .io import write_json

SVG_W, SVG_H = 800, 500
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 40, 60


@dataclass(frozen=True)
class Histogram:
    """Binned values plus the fitted-normal overlay parameters.

    Bin edges are aligned to integer multiples of the bin width, so equal
    inputs always produce identical binning regardless of data order.
    """

    bin_edges: np.ndarray
    counts: np.ndarray
    overlay_mu: float
    overlay_sigma: float
    display_interval: tuple[float, float]

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def bin_width(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0])

    def overlay_density(self, x: np.ndarray) -> np.ndarray:
        """Normal curve scaled to the histogram's mass (count units)."""
        if self.overlay_sigma <= 0:
            return np.zeros_like(np.asarray(x, dtype=np.float64))
        z = (np.asarray(x, dtype=np.float64) - self.overlay_mu) / self.overlay_sigma
        pdf = np.exp(-0.5 * z * z) / (self.overlay_sigma * math.sqrt(2 * math.pi))
        return pdf * self.n * self.bin_width


def build_histogram(values, bin_width: float) -> Histogram:
    """Histogram over uniform bins with a same-sample normal overlay."""
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size < 2:
        raise TooFewValues(f"histogram needs >= 2 values, got {vals.size}")
    if not bin_width > 0:
        raise ValueError("bin_width must be > 0")
    i0 = int(np.floor(vals.min() / bin_width))
    i1 = int(np.floor(vals.max() / bin_width)) + 1
    edges = np.arange(i0, i1 + 1, dtype=np.float64) * bin_width
    idx = np.floor(vals / bin_width).astype(np.int64) - i0
    counts = np.bincount(idx, minlength=i1 - i0)
    q01, q99 = np.quantile(vals, [0.01, 0.99])
    return Histogram(
        bin_edges=edges,
        counts=counts,
        overlay_mu=float(vals.mean()),
        overlay_sigma=float(vals.std(ddof=1)),
        display_interval=(float(q01), float(q99)),
    )


@dataclass(frozen=True)
class PatchMapEntry:
    patch_id: int
    bounds: Box2D
    value: float
    color: str


@dataclass(frozen=True)
class PatchMap:
    """Colored patch footprints plus the scale they were colored against."""

    mode: str  # "abs" | "signed"
    scale_max: float
    entries: tuple[PatchMapEntry, ...]


def _ramp_color(t: float) -> str:
    """Blue (t=0) to red (t=1), linear in RGB."""
    t = min(1.0, max(0.0, t))
    return f"#{round(255 * t):02x}00{round(255 * (1 - t)):02x}"


def build_patch_map(patches: Sequence, measures: Sequence, mode: str = "abs") -> PatchMap:
    """Color patches by their mean deviation.

    abs mode: |mu_i| on the blue-to-red ramp over [0, q99 of |mu_i|],
    clipping above. signed mode: blue for mu_i >= 0, red for mu_i < 0.
    ``patches`` and ``measures`` align one-to-one (the valid set).
    """
    if mode not in ("abs", "signed"):
        raise ValueError("mode must be 'abs' or 'signed'")
    if len(patches) != len(measures):
        raise ValueError("patches and measures must align one-to-one")
    pairs = sorted(zip(patches, measures), key=lambda pm: pm[0].id)
    entries = []
    if mode == "abs":
        abs_mu = np.asarray([abs(m.mu_i) for _, m in pairs])
        scale_max = float(np.quantile(abs_mu, 0.99)) if abs_mu.size else 0.0
        for patch, measure in pairs:
            value = abs(measure.mu_i)
            t = value / scale_max if scale_max > 0 else 0.0
            entries.append(PatchMapEntry(patch.id, patch.bounds, value, _ramp_color(t)))
    else:
        scale_max = float(max((abs(m.mu_i) for _, m in pairs), default=0.0))
        for patch, measure in pairs:
            color = "#0000ff" if measure.mu_i >= 0 else "#ff0000"
            entries.append(PatchMapEntry(patch.id, patch.bounds, measure.mu_i, color))
    return PatchMap(mode=mode, scale_max=scale_max, entries=tuple(entries))


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------

def write_histogram_csv(hist: Histogram, path) -> None:
    lines = ["bin_lo,bin_hi,count"]
    for i, count in enumerate(hist.counts):
        lines.append(f"{hist.bin_edges[i]:.6f},{hist.bin_edges[i + 1]:.6f},{int(count)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _svg_header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" '
        f'viewBox="0 0 {SVG_W} {SVG_H}">',
        f'<rect width="{SVG_W}" height="{SVG_H}" fill="white"/>',
        f'<text x="{SVG_W / 2:.1f}" y="24" font-family="sans-serif" font-size="16" '
        f'text-anchor="middle">{title}</text>',
    ]


def write_histogram_svg(hist: Histogram, path, title: str = "", x_label: str = "m") -> None:
    """Self-contained SVG: bars clipped to the display interval + overlay.

    The overlay degenerates to a vertical line at the mean when the spread
    is zero.
    """
    lo, hi = hist.display_interval
    if hi <= lo:  # constant data: widen so the single bar stays visible
        lo -= hist.bin_width
        hi += hist.bin_width
    plot_w = SVG_W - MARGIN_L - MARGIN_R
    plot_h = SVG_H - MARGIN_T - MARGIN_B

    def sx(x: float) -> float:
        return MARGIN_L + (x - lo) / (hi - lo) * plot_w

    centers = 0.5 * (hist.bin_edges[:-1] + hist.bin_edges[1:])
    shown = (centers >= lo) & (centers <= hi)
    y_max = max(float(hist.counts[shown].max()) if shown.any() else 1.0, 1.0)
    if hist.overlay_sigma > 0:
        y_max = max(y_max, float(hist.overlay_density(np.array([hist.overlay_mu]))[0]))

    def sy(y: float) -> float:
        return MARGIN_T + plot_h - y / y_max * plot_h

    parts = _svg_header(title)
    # axes
    parts.append(
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T + plot_h}" x2="{SVG_W - MARGIN_R}" '
        f'y2="{MARGIN_T + plot_h}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" '
        f'y2="{MARGIN_T + plot_h}" stroke="black"/>'
    )
    for i in np.flatnonzero(shown):
        x0, x1 = hist.bin_edges[i], hist.bin_edges[i + 1]
        c = int(hist.counts[i])
        if c == 0:
            continue
        parts.append(
            f'<rect x="{sx(x0):.2f}" y="{sy(c):.2f}" '
            f'width="{max(sx(x1) - sx(x0), 0.5):.2f}" height="{sy(0) - sy(c):.2f}" '
            f'fill="#7f9fcf" stroke="#40608f" stroke-width="0.5"/>'
        )
    if hist.overlay_sigma > 0:
        xs = np.linspace(lo, hi, 200)
        ys = hist.overlay_density(xs)
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="#c03030" stroke-width="1.5"/>')
    elif lo <= hist.overlay_mu <= hi:
        parts.append(
            f'<line x1="{sx(hist.overlay_mu):.2f}" y1="{MARGIN_T}" '
            f'x2="{sx(hist.overlay_mu):.2f}" y2="{MARGIN_T + plot_h}" '
            f'stroke="#c03030" stroke-width="1.5"/>'
        )
    # tick labels
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        x = lo + frac * (hi - lo)
        parts.append(
            f'<text x="{sx(x):.2f}" y="{MARGIN_T + plot_h + 18}" font-family="sans-serif" '
            f'font-size="11" text-anchor="middle">{x:.3f}</text>'
        )
    parts.append(
        f'<text x="{MARGIN_L - 8}" y="{MARGIN_T + 4}" font-family="sans-serif" '
        f'font-size="11" text-anchor="end">{y_max:.0f}</text>'
    )
    parts.append(
        f'<text x="{SVG_W / 2:.1f}" y="{SVG_H - 16}" font-family="sans-serif" '
        f'font-size="12" text-anchor="middle">{x_label}</text>'
    )
    parts.append(
        f'<text x="{SVG_W - MARGIN_R}" y="{MARGIN_T - 6}" font-family="sans-serif" '
        f'font-size="11" text-anchor="end">mean {hist.overlay_mu:.4f} '
        f'sd {hist.overlay_sigma:.4f} n {hist.n}</text>'
    )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def write_patch_map_geojson(pmap: PatchMap, path) -> None:
    """Patch footprints as GeoJSON polygons with value/color properties."""
    features = []
    for e in pmap.entries:
        b = e.bounds
        ring = [
            [b.xmin, b.ymin],
            [b.xmax, b.ymin],
            [b.xmax, b.ymax],
            [b.xmin, b.ymax],
            [b.xmin, b.ymin],
        ]
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {
                    "patch_id": e.patch_id,
                    "value": round(e.value, 6),
                    "color": e.color,
                },
            }
        )
    write_json(
        path,
        {
            "type": "FeatureCollection",
            "properties": {"mode": pmap.mode, "scale_max": round(pmap.scale_max, 6)},
            "features": features,
        },
    )


def read_patch_map_geojson(path) -> PatchMap:
    import json

    data = json.loads(Path(path).read_text(encoding="utf-8"))
    entries = []
    for f in data["features"]:
        ring = f["geometry"]["coordinates"][0]
        xs = [p[0] for p in ring]
        ys = [p[1] for p in ring]
        entries.append(
            PatchMapEntry(
                patch_id=int(f["properties"]["patch_id"]),
                bounds=Box2D(min(xs), min(ys), max(xs), max(ys)),
                value=float(f["properties"]["value"]),
                color=f["properties"]["color"],
            )
        )
    props = data.get("properties", {})
    return PatchMap(
        mode=props.get("mode", "abs"),
        scale_max=float(props.get("scale_max", 0.0)),
        entries=tuple(entries),
    )


def write_patch_map_svg(pmap: PatchMap, path, title: str = "") -> None:
    """Spatial footprint plot; fill encodes the patch value."""
    size = 700
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size + 120}" height="{size + 60}" '
        f'viewBox="0 0 {size + 120} {size + 60}">',
        f'<rect width="{size + 120}" height="{size + 60}" fill="white"/>',
        f'<text x="{(size + 120) / 2:.1f}" y="22" font-family="sans-serif" font-size="15" '
        f'text-anchor="middle">{title}</text>',
    ]
    if pmap.entries:
        xmin = min(e.bounds.xmin for e in pmap.entries)
        xmax = max(e.bounds.xmax for e in pmap.entries)
        ymin = min(e.bounds.ymin for e in pmap.entries)
        ymax = max(e.bounds.ymax for e in pmap.entries)
        span = max(xmax - xmin, ymax - ymin, 1e-9)
        scale = size / span

        def px(x: float) -> float:
            return 20 + (x - xmin) * scale

        def py(y: float) -> float:
            return 30 + (ymax - y) * scale  # y grows upward on the ground

        for e in pmap.entries:
            b = e.bounds
            parts.append(
                f'<rect x="{px(b.xmin):.2f}" y="{py(b.ymax):.2f}" '
                f'width="{(b.width * scale):.2f}" height="{(b.height * scale):.2f}" '
                f'fill="{e.color}"/>'
            )
    # legend
    lx = size + 40
    if pmap.mode == "abs":
        steps = 10
        for i in range(steps):
            t = i / (steps - 1)
            parts.append(
                f'<rect x="{lx}" y="{30 + (steps - 1 - i) * 20}" width="24" height="20" '
                f'fill="{_ramp_color(t)}"/>'
            )
        parts.append(
            f'<text x="{lx + 30}" y="{30 + steps * 20}" font-family="sans-serif" '
            f'font-size="11">0.000</text>'
        )
        parts.append(
            f'<text x="{lx + 30}" y="44" font-family="sans-serif" font-size="11">'
            f"{pmap.scale_max:.3f}</text>"
        )
    else:
        parts.append(f'<rect x="{lx}" y="30" width="24" height="20" fill="#0000ff"/>')
        parts.append(
            f'<text x="{lx + 30}" y="45" font-family="sans-serif" font-size="11">positive</text>'
        )
        parts.append(f'<rect x="{lx}" y="56" width="24" height="20" fill="#ff0000"/>')
        parts.append(
            f'<text x="{lx + 30}" y="71" font-family="sans-serif" font-size="11">negative</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Per-patch table
# ---------------------------------------------------------------------------

PER_PATCH_FIELDS = ["id", "x_center", "y_center", "n_i", "mu_i", "sigma_i", "status", "reason"]


def write_per_patch_csv(path, patches: Sequence, measures: Sequence, statuses: Sequence) -> None:
    """One row per patch (id order), including rejected patches."""
    by_id = {m.patch_id: m for m in measures}
    status_by_id = {s.patch_id: s for s in statuses}
    lines = [",".join(PER_PATCH_FIELDS)]
    for patch in sorted(patches, key=lambda p: p.id):
        m = by_id[patch.id]
        s = status_by_id[patch.id]
        cx, cy = patch.bounds.center
        lines.append(
            f"{patch.id},{cx:.6f},{cy:.6f},{m.n_i},{m.mu_i:.6f},{m.sigma_i:.6f},"
            f"{'valid' if s.valid else 'rejected'},{s.reason if s.reason else ''}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_per_patch_csv(path) -> list[dict]:
    """Rows back as dicts with numeric fields parsed."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "id": int(row["id"]),
                    "x_center": float(row["x_center"]),
                    "y_center": float(row["y_center"]),
                    "n_i": int(row["n_i"]),
                    "mu_i": float(row["mu_i"]),
                    "sigma_i": float(row["sigma_i"]),
                    "status": row["status"],
                    "reason": row["reason"] or None,
                }
            )
    return rows


def render_report(
    rows: list[dict],
    out_dir,
    patch_size: float,
    hist_bin_mu: float = 0.005,
    hist_bin_sigma: float = 0.01,
    map_mode: str = "abs",
) -> list[Path]:
    """Build every artifact from a per-patch table; returns written paths.

    Valid rows feed two histograms (mean deviations, standard deviations)
    and the patch map; patch bounds are reconstructed from the centers and
    the uniform patch size.
    """
    from .measures import PatchMeasure  # local import keeps module deps one-way

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    valid = [r for r in rows if r["status"] == "valid"]
    written: list[Path] = []
    if len(valid) >= 2:
        mus = [r["mu_i"] for r in valid]
        sigmas = [r["sigma_i"] for r in valid]
        hist_mu = build_histogram(mus, hist_bin_mu)
        hist_sigma = build_histogram(sigmas, hist_bin_sigma)
        for hist, stem, label in (
            (hist_mu, "hist_mean_dev", "mean deviation (m)"),
            (hist_sigma, "hist_std_dev", "standard deviation (m)"),
        ):
            csv_path = out_dir / f"{stem}.csv"
            svg_path = out_dir / f"{stem}.svg"
            write_histogram_csv(hist, csv_path)
            write_histogram_svg(hist, svg_path, title=stem.replace("_", " "), x_label=label)
            written += [csv_path, svg_path]

        half = patch_size / 2.0

        class _Geom:
            __slots__ = ("id", "bounds")

            def __init__(self, pid: int, bounds: Box2D):
                self.id = pid
                self.bounds = bounds

        geoms = [
            _Geom(
                r["id"],
                Box2D(
                    r["x_center"] - half,
                    r["y_center"] - half,
                    r["x_center"] + half,
                    r["y_center"] + half,
                ),
            )
            for r in valid
        ]
        pms = [PatchMeasure(r["id"], r["n_i"], r["mu_i"], r["sigma_i"]) for r in valid]
        pmap = build_patch_map(geoms, pms, mode=map_mode)
        geo_path = out_dir / "patch_map.geojson"
        map_svg = out_dir / "patch_map.svg"
        write_patch_map_geojson(pmap, geo_path)
        write_patch_map_svg(pmap, map_svg, title=f"patch map ({map_mode})")
        written += [geo_path, map_svg]
    return written
