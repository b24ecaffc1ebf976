import numpy as np
import pytest

from patchqc.core import Box2D, Plane, Raster
from patchqc.errors import ConfigError, DegenerateHistogram, MissingOrtho
from patchqc.patching import Patch
from patchqc.screening import (
    REASON_MEAN_DEV,
    REASON_POINTS,
    REASON_SHADOW,
    REASON_VEGETATION,
    ResolvedThresholds,
    ScreenConfig,
    ShadowMask,
    compute_negi,
    compute_shadow_mask,
    five_point_probe,
    otsu_threshold,
    probe_locations,
    resolve_thresholds,
    screen_patches,
)

from conftest import make_rng


class FakeMeasure:
    def __init__(self, patch_id, n_i, mu_i, sigma_i=0.05):
        self.patch_id = patch_id
        self.n_i = n_i
        self.mu_i = mu_i
        self.sigma_i = sigma_i


def make_patch(pid, x0=0.0, y0=0.0):
    plane = Plane(normal=np.array([0.0, 0.0, 1.0]), d=0.0, rpf=0.0, support=12)
    return Patch(id=pid, segment_id=1, bounds=Box2D(x0, y0, x0 + 2.0, y0 + 2.0),
                 plane=plane, n_als=12)


def solid_ortho(rgb, size=100, cell=0.1, origin=(0.0, 10.0)):
    h = w = size
    bands = np.empty((3, h, w), dtype=np.uint8)
    for i, v in enumerate(rgb):
        bands[i] = v
    return Raster(origin, cell, bands)


class TestNegi:
    def test_gray_is_zero(self):
        assert compute_negi(128, 128, 128) == pytest.approx(0.0)

    def test_green_dominant(self):
        assert compute_negi(100, 200, 100) == pytest.approx(200.0 / 600.0)

    def test_balanced(self):
        assert compute_negi(120, 100, 80) == pytest.approx(0.0)

    def test_zero_denominator_undefined(self):
        assert np.isnan(compute_negi(0, 0, 0))

    def test_vectorized_range(self):
        rng = make_rng(80)
        r, g, b = rng.integers(0, 256, (3, 1000)).astype(float)
        v = compute_negi(r, g, b)
        assert np.all(v[np.isfinite(v)] >= -1.0)
        assert np.all(v[np.isfinite(v)] <= 1.0)


class TestOtsu:
    def test_two_spike_histogram(self):
        vals = np.array([40.0] * 500 + [200.0] * 500)
        t = otsu_threshold(vals)
        assert 40.0 < t < 200.0

    def test_constant_has_no_threshold(self):
        assert otsu_threshold(np.full(100, 80.0)) is None

    def test_separates_overlapping_modes(self):
        rng = make_rng(81)
        vals = np.concatenate([rng.normal(60, 10, 5000), rng.normal(180, 10, 5000)])
        vals = np.clip(vals, 0, 255)
        t = otsu_threshold(vals)
        assert 90 < t < 150


class TestShadowMask:
    def test_bimodal_splits_exactly(self):
        bands = np.empty((3, 10, 10), dtype=np.uint8)
        bands[:, :, :5] = 40
        bands[:, :, 5:] = 200
        mask = compute_shadow_mask(Raster((0.0, 1.0), 0.1, bands))
        assert mask.raster.bands[0, :, :5].all()
        assert not mask.raster.bands[0, :, 5:].any()

    def test_checkerboard(self):
        board = np.indices((8, 8)).sum(0) % 2 == 0
        lum = np.where(board, 40, 200).astype(np.uint8)
        mask = compute_shadow_mask(Raster((0.0, 8.0), 1.0, np.stack([lum] * 3)))
        assert np.array_equal(mask.raster.bands[0].astype(bool), board)

    def test_constant_warns_all_false(self):
        ortho = solid_ortho((200, 200, 200), size=20)
        with pytest.warns(DegenerateHistogram):
            mask = compute_shadow_mask(ortho)
        assert not mask.raster.bands[0].any()

    def test_single_band_rejected(self):
        r = Raster((0.0, 1.0), 0.1, np.zeros((1, 10, 10)))
        with pytest.raises(MissingOrtho):
            compute_shadow_mask(r)

    def test_fixed_threshold(self):
        bands = np.empty((3, 4, 4), dtype=np.uint8)
        bands[:] = 100
        bands[:, 0, 0] = 10
        cfg = ScreenConfig(shadow_method="fixed", shadow_threshold=50.0)
        mask = compute_shadow_mask(Raster((0.0, 4.0), 1.0, bands), cfg)
        assert mask.raster.bands[0, 0, 0]
        assert mask.raster.bands[0].sum() == 1

    def test_georeferencing_preserved(self):
        ortho = solid_ortho((10, 10, 10), size=30, cell=0.25, origin=(5.0, 42.0))
        bands = ortho.bands.copy()
        bands[:, 0, 0] = 250
        ortho = Raster(ortho.origin, ortho.cell_size, bands)
        mask = compute_shadow_mask(ortho)
        assert mask.raster.origin == ortho.origin
        assert mask.raster.cell_size == ortho.cell_size


class TestProbe:
    def test_locations(self):
        b = Box2D(0.0, 0.0, 2.0, 2.0)
        locs = probe_locations(b)
        assert len(locs) == 5
        assert (1.0, 1.0) in locs
        assert set(locs) >= {(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)}

    def test_all_inside_true(self):
        ok = five_point_probe(Box2D(0, 0, 2, 2), lambda x, y: True)
        assert ok

    def test_one_corner_fails(self):
        pred = lambda x, y: not (x == 0.0 and y == 0.0)
        assert not five_point_probe(Box2D(0, 0, 2, 2), pred)

    def test_center_fails(self):
        pred = lambda x, y: not (x == 1.0 and y == 1.0)
        assert not five_point_probe(Box2D(0, 0, 2, 2), pred)

    def test_none_counts_as_failure(self):
        assert not five_point_probe(Box2D(0, 0, 2, 2), lambda x, y: None)


class TestResolveThresholds:
    def test_auto_min_points_is_half_median(self):
        measures = [FakeMeasure(i, n, 0.0) for i, n in enumerate([100, 200, 300, 400, 500])]
        t = resolve_thresholds(measures, ScreenConfig())
        assert t.min_dim_points == 150.0  # 0.5 x median(300)

    def test_auto_min_points_floor(self):
        measures = [FakeMeasure(0, 2, 0.0), FakeMeasure(1, 3, 0.0)]
        t = resolve_thresholds(measures, ScreenConfig())
        assert t.min_dim_points == 2.0

    def test_auto_mean_dev_is_q99_plus_tolerance(self):
        mus = np.linspace(-0.05, 0.05, 101)
        measures = [FakeMeasure(i, 100, m) for i, m in enumerate(mus)]
        t = resolve_thresholds(measures, ScreenConfig())
        q99 = float(np.quantile(np.abs(mus), 0.99))
        assert t.max_abs_mean_dev == pytest.approx(q99 + 0.02)

    def test_explicit_values_pass_through(self):
        cfg = ScreenConfig(min_dim_points=50, max_abs_mean_dev=0.3)
        t = resolve_thresholds([], cfg)
        assert t.min_dim_points == 50.0
        assert t.max_abs_mean_dev == 0.3

    def test_nan_means_ignored(self):
        measures = [FakeMeasure(0, 10, float("nan"))] + [
            FakeMeasure(i, 10, 0.01) for i in range(1, 5)]
        t = resolve_thresholds(measures, ScreenConfig())
        assert t.max_abs_mean_dev == pytest.approx(0.03)


class TestScreenPatches:
    def _run(self, measures, config=None, **kw):
        patches = [make_patch(m.patch_id, x0=2.0 * m.patch_id) for m in measures]
        cfg = config or ScreenConfig(use_shadow=False, use_vegetation=False)
        return screen_patches(patches, measures, cfg, **kw)

    def test_rule1_too_few_points(self):
        measures = [FakeMeasure(1, 400, 0.0), FakeMeasure(2, 3, 0.0),
                    FakeMeasure(3, 420, 0.0)]
        statuses, t = self._run(measures)
        by_id = {s.patch_id: s for s in statuses}
        assert not by_id[2].valid and by_id[2].reason == REASON_POINTS
        assert by_id[1].valid and by_id[3].valid

    def test_rule2_mean_dev_cap(self):
        measures = [FakeMeasure(i, 100, 0.01) for i in range(1, 100)]
        measures.append(FakeMeasure(100, 100, 0.50))
        statuses, t = self._run(measures)
        by_id = {s.patch_id: s for s in statuses}
        assert not by_id[100].valid and by_id[100].reason == REASON_MEAN_DEV
        assert sum(s.valid for s in statuses) == 99

    def test_rule_order_one_before_three(self):
        # patch in shadow AND with too few points: rule 1 wins
        ortho = solid_ortho((40, 40, 40), size=120, cell=0.1, origin=(0.0, 6.0))
        mask = ShadowMask(Raster(ortho.origin, ortho.cell_size,
                                 np.ones((1, 120, 120), dtype=bool)))
        measures = [FakeMeasure(1, 2, 0.0), FakeMeasure(2, 300, 0.0)]
        patches = [make_patch(1, x0=1.0), make_patch(2, x0=4.0)]
        cfg = ScreenConfig(use_shadow=True, use_vegetation=False)
        statuses, _ = screen_patches(patches, measures, cfg, ortho=ortho,
                                     shadow_mask=mask)
        by_id = {s.patch_id: s for s in statuses}
        assert by_id[1].reason == REASON_POINTS
        assert by_id[2].reason == REASON_SHADOW

    def test_vegetation_rule(self):
        # lit green field with a dark strip so the shadow histogram is bimodal
        ortho = solid_ortho((100, 200, 100), size=120, cell=0.1, origin=(0.0, 6.0))
        bands = ortho.bands.copy()
        bands[:, :, 110:] = 20
        ortho = Raster(ortho.origin, ortho.cell_size, bands)
        measures = [FakeMeasure(1, 300, 0.0)]
        patches = [make_patch(1, x0=2.0, y0=2.0)]
        statuses, _ = screen_patches(patches, measures, ScreenConfig(),
                                     ortho=ortho)
        assert statuses[0].reason == REASON_VEGETATION
        assert statuses[0].land_cover == "grassland"

    def test_vegetation_only_rule_leaves_cover_unlabeled(self):
        # the three-way cover label needs both attributes; one alone cannot
        ortho = solid_ortho((100, 200, 100), size=120, cell=0.1, origin=(0.0, 6.0))
        measures = [FakeMeasure(1, 300, 0.0)]
        patches = [make_patch(1, x0=2.0, y0=2.0)]
        cfg = ScreenConfig(use_shadow=False, use_vegetation=True)
        statuses, _ = screen_patches(patches, measures, cfg, ortho=ortho)
        assert statuses[0].reason == REASON_VEGETATION
        assert statuses[0].land_cover == "unlabeled"

    def test_benign_ortho_rejects_nothing(self):
        # all-false shadow mask + non-vegetation colors: rules 3-4 are identity
        ortho = solid_ortho((200, 190, 180), size=120, cell=0.1, origin=(0.0, 6.0))
        mask = ShadowMask(Raster(ortho.origin, ortho.cell_size,
                                 np.zeros((1, 120, 120), dtype=bool)))
        measures = [FakeMeasure(i, 300, 0.001 * i) for i in range(1, 4)]
        patches = [make_patch(i, x0=2.0 * i, y0=2.0) for i in range(1, 4)]
        statuses, _ = screen_patches(patches, measures, ScreenConfig(),
                                     ortho=ortho, shadow_mask=mask)
        assert all(s.valid for s in statuses)
        assert all(s.land_cover == "bare_ground" for s in statuses)

    def test_missing_ortho_raises(self):
        measures = [FakeMeasure(1, 300, 0.0)]
        patches = [make_patch(1)]
        with pytest.raises(MissingOrtho):
            screen_patches(patches, measures, ScreenConfig())

    def test_monotone_in_min_points(self):
        measures = [FakeMeasure(i, 10 * i, 0.0) for i in range(1, 30)]
        rejected = set()
        for cutoff in (50, 100, 150, 200):
            cfg = ScreenConfig(min_dim_points=cutoff, use_shadow=False,
                               use_vegetation=False)
            statuses, _ = self._run(measures, config=cfg)
            now = {s.patch_id for s in statuses if not s.valid}
            assert rejected <= now
            rejected = now

    def test_nan_mean_rejected_not_passed(self):
        measures = [FakeMeasure(1, 300, float("nan")),
                    FakeMeasure(2, 300, 0.0)]
        cfg = ScreenConfig(min_dim_points=2, max_abs_mean_dev=0.1,
                           use_shadow=False, use_vegetation=False)
        statuses, _ = self._run(measures, config=cfg)
        by_id = {s.patch_id: s for s in statuses}
        assert not by_id[1].valid and by_id[1].reason == REASON_MEAN_DEV

    def test_shadow_before_vegetation_in_land_cover(self):
        # dark green pixels: shadow masks them first; cover reads shaded
        ortho = solid_ortho((10, 60, 10), size=120, cell=0.1, origin=(0.0, 6.0))
        bands = ortho.bands.copy()
        bands[:, :, 60:] = 220  # bright half so the histogram is bimodal
        ortho = Raster(ortho.origin, ortho.cell_size, bands)
        measures = [FakeMeasure(1, 300, 0.0)]
        patches = [make_patch(1, x0=1.0, y0=2.0)]
        statuses, _ = screen_patches(patches, measures, ScreenConfig(),
                                     ortho=ortho)
        assert statuses[0].reason == REASON_SHADOW
        assert statuses[0].land_cover == "shaded"


class TestScreenConfig:
    def test_negi_threshold_validated(self):
        with pytest.raises(ConfigError):
            ScreenConfig(negi_threshold=1.5)

    def test_min_points_validated(self):
        with pytest.raises(ConfigError):
            ScreenConfig(min_dim_points=0)

    def test_unknown_shadow_method(self):
        with pytest.raises(ConfigError):
            ScreenConfig(shadow_method="magic")
