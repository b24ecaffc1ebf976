import numpy as np
import pytest

from patchqc.core import PointCloud, fit_plane
from patchqc.errors import NoSeeds
from patchqc.segmentation import (
    ScreenThresholds,
    SegParams,
    hough_seeds,
    local_normals,
    passes_screen,
    screen_segments,
    segment_cloud,
    segment_features,
    surface_grow,
)

from conftest import make_rng, plane_cloud


def members(cloud, sid):
    return np.nonzero(cloud.segment_id == sid)[0]


class TestHoughSeeds:
    def test_single_plane_top_seed(self):
        # seed height correct within one offset bin; growing completes the rest
        cloud = plane_cloud(2000, extent=20.0, noise=0.01, seed=40, z0=5.0)
        seeds = hough_seeds(cloud)
        plane, support = seeds[0]
        assert len(support) >= 100
        assert abs(plane.normal[2]) > 0.999
        assert plane.z_at(10.0, 10.0) == pytest.approx(5.0, abs=0.2)
        dist = np.abs(plane.signed_distance(cloud.points[support]))
        assert dist.max() <= SegParams().max_plane_dist + 1e-9

    def test_two_parallel_planes(self):
        rng = make_rng(41)
        xy = rng.uniform(0, 20, (1000, 2))
        z = np.concatenate([np.zeros(500), np.full(500, 10.0)])
        cloud = PointCloud(np.column_stack([xy, z]))
        seeds = hough_seeds(cloud)
        assert len(seeds) == 2
        heights = sorted(p.z_at(10, 10) for p, _ in seeds)
        assert heights[0] == pytest.approx(0.0, abs=1e-9)
        assert heights[1] == pytest.approx(10.0, abs=1e-9)
        assert len(seeds[0][1]) == 500 and len(seeds[1][1]) == 500

    def test_supports_disjoint(self):
        rng = make_rng(42)
        xy = rng.uniform(0, 25, (2400, 2))
        z = np.where(xy[:, 0] < 12.5, 0.0, 2.0) + rng.normal(0, 0.02, 2400)
        cloud = PointCloud(np.column_stack([xy, z]))
        seeds = hough_seeds(cloud)
        seen = set()
        for _, support in seeds:
            s = set(support.tolist())
            assert not (s & seen)
            seen |= s

    def test_too_sparse_raises(self):
        cloud = PointCloud(make_rng(43).uniform(0, 5, (50, 3)))
        with pytest.raises(NoSeeds):
            hough_seeds(cloud)

    def test_respects_ground_labels(self):
        # non-ground points may not enter any seed support
        rng = make_rng(44)
        xy = rng.uniform(0, 20, (1500, 2))
        cloud = PointCloud(
            np.column_stack([xy, np.zeros(1500)]),
            class_label=np.where(np.arange(1500) < 300, 1, 2).astype(np.uint8),
        )
        seeds = hough_seeds(cloud)
        for _, support in seeds:
            assert support.min() >= 300


class TestSurfaceGrow:
    def test_single_plane_single_segment(self):
        cloud = plane_cloud(3000, extent=25.0, noise=0.02, seed=45)
        seg = surface_grow(cloud, hough_seeds(cloud))
        ids = np.unique(seg.segment_id[seg.segment_id > 0])
        assert list(ids) == [1]
        assert (seg.segment_id == 1).sum() >= 2990

    def test_step_splits_segments(self):
        # 0.5 m breakline with 0.2 m plane tolerance: two segments, no mixing
        rng = make_rng(46)
        xy = rng.uniform(0, 40, (4000, 2))
        z = np.where(xy[:, 0] < 20, 0.0, 0.5) + rng.normal(0, 0.02, 4000)
        cloud = PointCloud(np.column_stack([xy, z]))
        seg, _ = segment_cloud(cloud)
        ids = np.unique(seg.segment_id[seg.segment_id > 0])
        assert len(ids) == 2
        for sid in ids:
            side = xy[members(seg, sid), 0] < 20
            assert side.all() or not side.any()

    def test_members_within_plane_distance(self):
        cloud = plane_cloud(2500, extent=20.0, noise=0.05, seed=47)
        params = SegParams()
        seg = surface_grow(cloud, hough_seeds(cloud, params), params)
        for sid in np.unique(seg.segment_id[seg.segment_id > 0]):
            idx = members(seg, sid)
            plane = fit_plane(seg.points[idx])
            dist = np.abs(plane.signed_distance(seg.points[idx]))
            assert dist.max() <= params.max_plane_dist + 1e-9

    def test_far_outliers_stay_unsegmented(self):
        rng = make_rng(48)
        base = plane_cloud(2000, extent=20.0, noise=0.01, seed=48)
        outliers = np.column_stack([
            rng.uniform(0, 20, (40, 2)),
            rng.uniform(3.0, 8.0, 40),
        ])
        cloud = PointCloud(np.vstack([base.points, outliers]))
        seg = surface_grow(cloud, hough_seeds(cloud))
        assert (seg.segment_id[2000:] == 0).all()

    def test_translation_invariance(self):
        rng = make_rng(49)
        xy = rng.uniform(0, 30, (3000, 2))
        z = np.where(xy[:, 1] < 15, 0.0, 1.0) + rng.normal(0, 0.02, 3000)
        cloud = PointCloud(np.column_stack([xy, z]))
        shifted = PointCloud(cloud.points + [1000.0, 500.0, 20.0])
        a, _ = segment_cloud(cloud)
        b, _ = segment_cloud(shifted)
        assert np.array_equal(a.segment_id, b.segment_id)

    def test_ids_one_based_dense(self):
        rng = make_rng(50)
        xy = rng.uniform(0, 30, (3000, 2))
        z = np.where(xy[:, 0] < 15, 0.0, 2.0) + rng.normal(0, 0.02, 3000)
        seg = surface_grow(PointCloud(np.column_stack([xy, z])),
                           hough_seeds(PointCloud(np.column_stack([xy, z]))))
        ids = np.unique(seg.segment_id)
        assert ids.min() >= 0
        positive = ids[ids > 0]
        assert list(positive) == list(range(1, len(positive) + 1))


class TestLocalNormals:
    def test_flat_points_get_vertical_normals(self):
        pts = plane_cloud(500, extent=10.0, noise=0.0, seed=51).points
        normals = local_normals(pts, k=10)
        assert np.allclose(np.abs(normals[:, 2]), 1.0, atol=1e-9)

    def test_unit_length(self):
        rng = make_rng(52)
        pts = rng.uniform(0, 10, (300, 3))
        normals = local_normals(pts, k=10)
        assert np.allclose(np.linalg.norm(normals, axis=1), 1.0, atol=1e-9)


class TestSegmentFeatures:
    def test_flat_segment(self):
        pts = plane_cloud(800, extent=15.0, noise=0.0, seed=53).points
        f = segment_features(pts)
        assert f.size == 800
        assert f.normal_slope == pytest.approx(0.0, abs=1e-6)
        assert f.average_angle == pytest.approx(0.0, abs=1e-6)
        assert f.rpf == pytest.approx(0.0, abs=1e-6)
        assert f.linearity < 0.5

    def test_tilted_segment_slope(self):
        rng = make_rng(54)
        xy = rng.uniform(0, 20, (1500, 2))
        z = np.tan(np.radians(30.0)) * xy[:, 0]
        f = segment_features(np.column_stack([xy, z]))
        assert f.normal_slope == pytest.approx(30.0, abs=0.01)

    def test_noise_sets_rpf(self):
        pts = plane_cloud(5000, extent=20.0, noise=0.03, seed=55).points
        f = segment_features(pts)
        assert f.rpf == pytest.approx(0.03, rel=0.1)

    def test_strip_is_linear(self):
        rng = make_rng(56)
        xy = rng.uniform(0, 1, (2000, 2)) * [40.0, 1.0]
        f = segment_features(np.column_stack([xy, np.zeros(2000)]))
        assert f.linearity > 0.99


class TestScreen:
    def test_thresholds(self):
        base = segment_features(plane_cloud(500, extent=15.0, noise=0.01, seed=57).points)
        assert passes_screen(base, ScreenThresholds())
        import dataclasses
        small = dataclasses.replace(base, size=99)
        assert not passes_screen(small, ScreenThresholds())
        rough = dataclasses.replace(base, rpf=0.15)
        assert not passes_screen(rough, ScreenThresholds())
        steep = dataclasses.replace(base, normal_slope=50.0)
        assert not passes_screen(steep, ScreenThresholds())
        wavy = dataclasses.replace(base, average_angle=6.0)
        assert not passes_screen(wavy, ScreenThresholds())
        line = dataclasses.replace(base, linearity=0.995)
        assert not passes_screen(line, ScreenThresholds())

    def test_screen_segments_drops_but_keeps_ids(self):
        # a 60-point shelf fails the size bound; survivor keeps its id
        rng = make_rng(58)
        xy = rng.uniform(0, 20, (2000, 2))
        big = np.column_stack([xy, rng.normal(0, 0.01, 2000)])
        sxy = rng.uniform(0, 3, (60, 2))
        shelf = np.column_stack([sxy, 5.0 + rng.normal(0, 0.001, 60)])
        cloud = PointCloud(np.vstack([big, shelf]))
        seg = surface_grow(cloud, hough_seeds(cloud, SegParams(min_seed_support=50)),
                           SegParams(min_seed_support=50))
        n_before = len(np.unique(seg.segment_id[seg.segment_id > 0]))
        screened, feats = screen_segments(seg)
        ids_after = np.unique(screened.segment_id[screened.segment_id > 0])
        assert n_before == 2 and len(ids_after) == 1
        # the feature table reports every input segment, kept or not
        assert set(feats) == {1, 2}
        survivor = int(ids_after[0])
        assert feats[survivor].size >= 100
        dropped = ({1, 2} - {survivor}).pop()
        assert feats[dropped].size < 100


class TestSegmentCloud:
    def test_no_seeds_yields_zero_segments(self):
        # all non-ground: valid outcome, not an error
        rng = make_rng(59)
        cloud = PointCloud(
            rng.uniform(0, 10, (500, 3)) * [1.0, 1.0, 5.0],
        )
        seg, feats = segment_cloud(cloud)
        assert (seg.segment_id == 0).all()
        assert feats == {}
