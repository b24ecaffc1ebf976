"""Report artifacts: histograms with normal overlay, patch maps, exports."""

import xml.etree.ElementTree as ET

import numpy as np
import pytest

from patchqc.core import Box2D
from patchqc.errors import TooFewValues
from patchqc.measures import PatchMeasure
from patchqc.report import (
    PatchMapEntry,
    build_histogram,
    build_patch_map,
    read_patch_map_geojson,
    read_per_patch_csv,
    render_report,
    write_histogram_csv,
    write_histogram_svg,
    write_patch_map_geojson,
    write_patch_map_svg,
    write_per_patch_csv,
)
from patchqc.screening import PatchStatus

from conftest import make_rng


class _Geom:
    """Minimal patch stand-in: id + bounds is all the map builder needs."""

    def __init__(self, pid, bounds):
        self.id = pid
        self.bounds = bounds


def _measures(mus, sigma=0.03, n=50):
    return [PatchMeasure(i + 1, n, m, sigma) for i, m in enumerate(mus)]


def _geoms(k, size=2.0):
    return [_Geom(i + 1, Box2D(i * size, 0.0, (i + 1) * size, size)) for i in range(k)]


class TestBuildHistogram:
    def test_edges_aligned_to_bin_width(self):
        rng = make_rng(0)
        h = build_histogram(rng.normal(0.01, 0.05, 500), 0.005)
        ratios = h.bin_edges / 0.005
        assert np.allclose(ratios, np.round(ratios), atol=1e-9)
        assert np.all(np.diff(h.bin_edges) > 0)

    def test_counts_sum_to_n(self):
        rng = make_rng(1)
        vals = rng.normal(0, 0.04, 1234)
        h = build_histogram(vals, 0.005)
        assert h.counts.sum() == 1234
        # and the binning agrees with numpy over the same edges
        ref, _ = np.histogram(vals, bins=h.bin_edges)
        # np.histogram closes the last bin on the right; ours is half-open
        # everywhere, but the max value never sits exactly on an edge here
        assert np.array_equal(h.counts, ref)

    def test_order_independent(self):
        rng = make_rng(2)
        vals = rng.normal(0, 0.03, 800)
        a = build_histogram(vals, 0.005)
        b = build_histogram(vals[::-1], 0.005)
        assert np.array_equal(a.bin_edges, b.bin_edges)
        assert np.array_equal(a.counts, b.counts)

    def test_overlay_is_sample_mean_and_std(self):
        rng = make_rng(42)
        vals = rng.normal(0.0, 0.04, 10_000)
        h = build_histogram(vals, 0.005)
        assert h.overlay_mu == pytest.approx(0.0, abs=0.0015)
        assert h.overlay_sigma == pytest.approx(0.04, abs=0.0015)
        assert h.overlay_mu == pytest.approx(vals.mean(), abs=1e-12)
        assert h.overlay_sigma == pytest.approx(vals.std(ddof=1), abs=1e-12)

    def test_overlay_area_matches_histogram_mass(self):
        # integral of the scaled curve over the display window stays within
        # 5% of total bar mass (N x bin width) for normal data
        rng = make_rng(42)
        h = build_histogram(rng.normal(0.0, 0.04, 10_000), 0.005)
        lo, hi = h.display_interval
        xs = np.linspace(lo, hi, 2001)
        area = np.trapezoid(h.overlay_density(xs), xs)
        assert area == pytest.approx(h.n * h.bin_width, rel=0.05)

    def test_overlay_peak_value(self):
        rng = make_rng(7)
        h = build_histogram(rng.normal(0.02, 0.05, 5000), 0.005)
        expect = h.n * h.bin_width / (h.overlay_sigma * np.sqrt(2 * np.pi))
        got = h.overlay_density(np.array([h.overlay_mu]))[0]
        assert got == pytest.approx(expect, rel=1e-12)

    def test_display_interval_quantiles(self):
        # evenly spaced -0.09..0.10 step 0.001: interpolated order statistics
        vals = np.arange(-0.09, 0.1005, 0.001)
        h = build_histogram(vals, 0.005)
        assert h.display_interval[0] == pytest.approx(-0.0881, abs=5e-4)
        assert h.display_interval[1] == pytest.approx(0.0981, abs=5e-4)

    def test_clipping_drops_at_most_two_percent(self):
        rng = make_rng(3)
        vals = rng.normal(0, 0.04, 5000)
        h = build_histogram(vals, 0.005)
        lo, hi = h.display_interval
        inside = np.count_nonzero((vals >= lo) & (vals <= hi))
        assert inside >= 0.98 * vals.size

    def test_constant_values_single_bin(self):
        h = build_histogram([0.0125] * 40, 0.005)
        assert np.count_nonzero(h.counts) == 1
        assert h.counts.sum() == 40
        assert h.overlay_sigma == 0.0
        assert h.display_interval == (0.0125, 0.0125)
        # degenerate overlay renders as nothing from the density call
        assert np.all(h.overlay_density(np.linspace(-1, 1, 11)) == 0.0)

    def test_too_few_values(self):
        with pytest.raises(TooFewValues):
            build_histogram([], 0.005)
        with pytest.raises(TooFewValues):
            build_histogram([0.01], 0.005)

    def test_bad_bin_width(self):
        with pytest.raises(ValueError):
            build_histogram([0.0, 0.1], 0.0)


class TestBuildPatchMap:
    def test_all_zero_means_ramp_minimum(self):
        pmap = build_patch_map(_geoms(4), _measures([0.0, 0.0, 0.0, 0.0]))
        assert pmap.mode == "abs"
        assert all(e.color == "#0000ff" for e in pmap.entries)
        assert all(e.value == 0.0 for e in pmap.entries)

    def test_abs_scale_is_q99_of_abs_means(self):
        rng = make_rng(9)
        mus = rng.normal(0.0, 0.02, 300)
        pmap = build_patch_map(_geoms(300), _measures(list(mus)))
        assert pmap.scale_max == pytest.approx(np.quantile(np.abs(mus), 0.99), abs=1e-12)

    def test_abs_values_above_scale_clip_to_red(self):
        mus = [0.001] * 99 + [0.5]
        pmap = build_patch_map(_geoms(100), _measures(mus))
        top = [e for e in pmap.entries if e.value > pmap.scale_max]
        assert top and all(e.color == "#ff0000" for e in top)

    def test_abs_midpoint_color(self):
        # two patches at 0 and 2v: scale q99 sits just under 2v, so the
        # lower patch lands near the middle of the ramp
        pmap = build_patch_map(_geoms(2), _measures([0.02, 0.04]))
        lo = pmap.entries[0]
        t = lo.value / pmap.scale_max
        assert 0.4 < t < 0.6
        assert lo.color.startswith("#") and len(lo.color) == 7

    def test_abs_value_is_abs_of_mean(self):
        pmap = build_patch_map(_geoms(2), _measures([-0.03, 0.03]))
        assert [e.value for e in pmap.entries] == [0.03, 0.03]
        assert pmap.entries[0].color == pmap.entries[1].color

    def test_signed_mode_colors(self):
        pmap = build_patch_map(_geoms(3), _measures([0.02, -0.02, 0.0]), mode="signed")
        assert [e.color for e in pmap.entries] == ["#0000ff", "#ff0000", "#0000ff"]
        assert [e.value for e in pmap.entries] == [0.02, -0.02, 0.0]

    def test_one_entry_per_patch_sorted_by_id(self):
        geoms = _geoms(5)[::-1]
        ms = _measures([0.01, 0.02, 0.03, 0.04, 0.05])[::-1]
        pmap = build_patch_map(geoms, ms)
        assert [e.patch_id for e in pmap.entries] == [1, 2, 3, 4, 5]

    def test_rejects_bad_mode_and_misaligned_inputs(self):
        with pytest.raises(ValueError):
            build_patch_map(_geoms(2), _measures([0.0, 0.0]), mode="rainbow")
        with pytest.raises(ValueError):
            build_patch_map(_geoms(3), _measures([0.0, 0.0]))


class TestGeojson:
    def test_round_trip(self, tmp_path):
        rng = make_rng(4)
        mus = list(rng.normal(0.01, 0.02, 12))
        geoms = [
            _Geom(i + 1, Box2D(100.0 + 2 * i + 0.1234567, 50.0, 102.0 + 2 * i, 52.0))
            for i in range(12)
        ]
        pmap = build_patch_map(geoms, _measures(mus))
        path = tmp_path / "map.geojson"
        write_patch_map_geojson(pmap, path)
        back = read_patch_map_geojson(path)
        assert back.mode == pmap.mode
        assert back.scale_max == pytest.approx(pmap.scale_max, abs=1e-6)
        assert len(back.entries) == len(pmap.entries)
        for a, b in zip(pmap.entries, back.entries):
            assert a.patch_id == b.patch_id
            assert a.color == b.color
            assert b.value == pytest.approx(a.value, abs=1e-6)
            for attr in ("xmin", "ymin", "xmax", "ymax"):
                assert getattr(b.bounds, attr) == pytest.approx(
                    getattr(a.bounds, attr), abs=1e-6
                )

    def test_polygon_rings_closed(self, tmp_path):
        import json

        pmap = build_patch_map(_geoms(3), _measures([0.0, 0.01, 0.02]))
        path = tmp_path / "map.geojson"
        write_patch_map_geojson(pmap, path)
        data = json.loads(path.read_text())
        assert data["type"] == "FeatureCollection"
        assert len(data["features"]) == 3
        for feat in data["features"]:
            ring = feat["geometry"]["coordinates"][0]
            assert len(ring) == 5
            assert ring[0] == ring[-1]


class TestPerPatchCsv:
    def _table(self):
        geoms = _geoms(3)
        ms = [
            PatchMeasure(1, 120, 0.012345678, 0.04),
            PatchMeasure(2, 80, -0.02, 0.05),
            PatchMeasure(3, 5, float("nan"), float("nan")),
        ]
        statuses = [
            PatchStatus(1, True, None, "bare_ground"),
            PatchStatus(2, True, None, "bare_ground"),
            PatchStatus(3, False, "too_few_dim_points", "unlabeled"),
        ]
        return geoms, ms, statuses

    def test_round_trip(self, tmp_path):
        geoms, ms, statuses = self._table()
        path = tmp_path / "patches.csv"
        write_per_patch_csv(path, geoms, ms, statuses)
        rows = read_per_patch_csv(path)
        assert len(rows) == 3
        assert rows[0]["id"] == 1
        assert rows[0]["x_center"] == pytest.approx(1.0)
        assert rows[0]["mu_i"] == pytest.approx(0.012345678, abs=1e-6)
        assert rows[0]["status"] == "valid"
        assert rows[0]["reason"] is None
        assert rows[2]["status"] == "rejected"
        assert rows[2]["reason"] == "too_few_dim_points"
        assert isinstance(rows[1]["n_i"], int)

    def test_header_and_id_order(self, tmp_path):
        geoms, ms, statuses = self._table()
        path = tmp_path / "patches.csv"
        write_per_patch_csv(path, geoms[::-1], ms, statuses)
        lines = path.read_text().splitlines()
        assert lines[0] == "id,x_center,y_center,n_i,mu_i,sigma_i,status,reason"
        assert [int(ln.split(",")[0]) for ln in lines[1:]] == [1, 2, 3]


def _parse_svg(path):
    return ET.parse(path).getroot()


class TestSvg:
    def test_histogram_svg_bars_and_overlay(self, tmp_path):
        rng = make_rng(5)
        h = build_histogram(rng.normal(0.0, 0.03, 2000), 0.005)
        path = tmp_path / "h.svg"
        write_histogram_svg(h, path, title="mean dev")
        root = _parse_svg(path)
        ns = "{http://www.w3.org/2000/svg}"
        rects = root.findall(f"{ns}rect")
        assert len(rects) > 5  # background + one bar per populated shown bin
        assert root.findall(f"{ns}polyline")  # overlay curve present
        assert "mean dev" in path.read_text()

    def test_constant_data_draws_spike_not_curve(self, tmp_path):
        # 0.0125 * 40 reduces to an exact mean, so sigma is exactly zero
        h = build_histogram([0.0125] * 40, 0.005)
        path = tmp_path / "h.svg"
        write_histogram_svg(h, path)
        root = _parse_svg(path)
        ns = "{http://www.w3.org/2000/svg}"
        assert not root.findall(f"{ns}polyline")
        # axes plus one vertical marker line
        assert len(root.findall(f"{ns}line")) == 3

    def test_patch_map_svg_one_rect_per_patch(self, tmp_path):
        pmap = build_patch_map(_geoms(6), _measures([0.01 * i for i in range(6)]))
        path = tmp_path / "m.svg"
        write_patch_map_svg(pmap, path)
        root = _parse_svg(path)
        ns = "{http://www.w3.org/2000/svg}"
        rects = root.findall(f"{ns}rect")
        # background + 6 patches + 10 legend steps
        assert len(rects) == 17

    def test_writers_are_byte_deterministic(self, tmp_path):
        rng = make_rng(6)
        h = build_histogram(rng.normal(0.0, 0.04, 1000), 0.005)
        pmap = build_patch_map(_geoms(4), _measures([0.0, 0.01, 0.02, 0.03]))
        pairs = [
            (write_histogram_csv, h, "h.csv"),
            (write_histogram_svg, h, "h.svg"),
            (write_patch_map_geojson, pmap, "m.geojson"),
            (write_patch_map_svg, pmap, "m.svg"),
        ]
        for writer, obj, name in pairs:
            p1 = tmp_path / f"a_{name}"
            p2 = tmp_path / f"b_{name}"
            writer(obj, p1)
            writer(obj, p2)
            assert p1.read_bytes() == p2.read_bytes(), name


class TestRenderReport:
    def _rows(self, k=20, seed=8):
        rng = make_rng(seed)
        rows = []
        for i in range(k):
            rows.append(
                {
                    "id": i + 1,
                    "x_center": 1.0 + 2.0 * (i % 5),
                    "y_center": 1.0 + 2.0 * (i // 5),
                    "n_i": 60,
                    "mu_i": float(rng.normal(0.01, 0.02)),
                    "sigma_i": float(abs(rng.normal(0.05, 0.01))),
                    "status": "valid",
                    "reason": None,
                }
            )
        return rows

    def test_artifact_set(self, tmp_path):
        rows = self._rows()
        written = render_report(rows, tmp_path / "out", patch_size=2.0)
        names = sorted(p.name for p in written)
        assert names == [
            "hist_mean_dev.csv",
            "hist_mean_dev.svg",
            "hist_std_dev.csv",
            "hist_std_dev.svg",
            "patch_map.geojson",
            "patch_map.svg",
        ]
        for p in written:
            assert p.exists() and p.stat().st_size > 0

    def test_bounds_rebuilt_from_centers(self, tmp_path):
        rows = self._rows(k=5)
        render_report(rows, tmp_path, patch_size=2.0)
        pmap = read_patch_map_geojson(tmp_path / "patch_map.geojson")
        for row, entry in zip(rows, pmap.entries):
            assert entry.bounds.center[0] == pytest.approx(row["x_center"], abs=1e-6)
            assert entry.bounds.center[1] == pytest.approx(row["y_center"], abs=1e-6)
            assert entry.bounds.width == pytest.approx(2.0, abs=1e-6)

    def test_rejected_rows_excluded_from_plots(self, tmp_path):
        rows = self._rows(k=10)
        for r in rows[7:]:
            r["status"] = "rejected"
            r["reason"] = "shaded"
        render_report(rows, tmp_path, patch_size=2.0)
        pmap = read_patch_map_geojson(tmp_path / "patch_map.geojson")
        assert len(pmap.entries) == 7
        csv_lines = (tmp_path / "hist_mean_dev.csv").read_text().splitlines()
        total = sum(int(ln.split(",")[2]) for ln in csv_lines[1:])
        assert total == 7

    def test_too_few_valid_rows_writes_nothing(self, tmp_path):
        rows = self._rows(k=3)
        for r in rows[1:]:
            r["status"] = "rejected"
            r["reason"] = "too_few_dim_points"
        written = render_report(rows, tmp_path, patch_size=2.0)
        assert written == []

    def test_signed_mode_flows_through(self, tmp_path):
        rows = self._rows(k=6)
        rows[0]["mu_i"] = -0.05
        render_report(rows, tmp_path, patch_size=2.0, map_mode="signed")
        pmap = read_patch_map_geojson(tmp_path / "patch_map.geojson")
        assert pmap.mode == "signed"
        assert pmap.entries[0].color == "#ff0000"

    def test_full_render_is_deterministic(self, tmp_path):
        rows = self._rows()
        a = tmp_path / "a"
        b = tmp_path / "b"
        render_report(rows, a, patch_size=2.0)
        render_report(rows, b, patch_size=2.0)
        for p in sorted(a.iterdir()):
            assert p.read_bytes() == (b / p.name).read_bytes(), p.name
