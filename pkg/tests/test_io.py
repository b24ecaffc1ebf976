import json

import numpy as np
import pytest

from patchqc.core import CLASS_GROUND, CLASS_NON_GROUND, PointCloud, Raster
from patchqc.errors import CrsMismatch, EmptyInput, FormatError
from patchqc.io import (
    file_sha256,
    load_las,
    load_raster,
    load_xyz,
    read_world_file,
    require_same_crs,
    save_las,
    save_raster,
    save_xyz,
    write_json,
)

from conftest import make_rng


class TestXyz:
    def test_roundtrip_with_labels(self, tmp_path):
        rng = make_rng(20)
        pts = rng.uniform(0, 100, (50, 3))
        labels = rng.choice([CLASS_GROUND, CLASS_NON_GROUND], 50).astype(np.uint8)
        segs = rng.integers(0, 5, 50).astype(np.int32)
        cloud = PointCloud(pts, class_label=labels, segment_id=segs)
        p = tmp_path / "cloud.xyz"
        save_xyz(p, cloud, crs="EPSG:25832")
        back, crs = load_xyz(p)
        assert crs == "EPSG:25832"
        assert np.allclose(back.points, pts, atol=1e-6)  # %.6f text precision
        assert np.array_equal(back.class_label, labels)
        assert np.array_equal(back.segment_id, segs)

    def test_plain_three_columns(self, tmp_path):
        p = tmp_path / "c.xyz"
        p.write_text("1.0 2.0 3.0\n4.0 5.0 6.0\n")
        cloud, crs = load_xyz(p)
        assert crs is None
        assert cloud.class_label is None
        assert len(cloud) == 2

    def test_header_comments_skipped(self, tmp_path):
        p = tmp_path / "c.xyz"
        p.write_text("# crs: EPSG:32632\n# units: m\n0 0 0\n1 1 1\n2 2 2\n")
        cloud, crs = load_xyz(p)
        assert crs == "EPSG:32632"
        assert len(cloud) == 3

    def test_nonmetric_units_rejected(self, tmp_path):
        p = tmp_path / "c.xyz"
        p.write_text("# units: ft\n0 0 0\n")
        with pytest.raises(FormatError):
            load_xyz(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "c.xyz"
        p.write_text("# crs: local\n")
        with pytest.raises(EmptyInput):
            load_xyz(p)

    def test_garbage_rejected(self, tmp_path):
        p = tmp_path / "c.xyz"
        p.write_text("not a point\n")
        with pytest.raises(FormatError):
            load_xyz(p)


class TestCrs:
    def test_matching(self):
        assert require_same_crs("EPSG:1", "EPSG:1") == "EPSG:1"

    def test_none_is_compatible(self):
        assert require_same_crs(None, "EPSG:1", None) == "EPSG:1"
        assert require_same_crs(None, None) is None

    def test_mismatch(self):
        with pytest.raises(CrsMismatch):
            require_same_crs("EPSG:1", "EPSG:2")


class TestLas:
    def test_roundtrip(self, tmp_path):
        rng = make_rng(21)
        pts = rng.uniform(0, 500, (100, 3))
        labels = rng.choice([CLASS_GROUND, CLASS_NON_GROUND], 100).astype(np.uint8)
        cloud = PointCloud(pts, class_label=labels)
        p = tmp_path / "cloud.las"
        save_las(p, cloud)
        back = load_las(p)
        # 1 mm quantization
        assert np.allclose(back.points, pts, atol=5e-4)
        assert np.array_equal(back.class_label, labels)

    def test_bad_signature(self, tmp_path):
        p = tmp_path / "x.las"
        p.write_bytes(b"NOTL" + bytes(300))
        with pytest.raises(FormatError):
            load_las(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "x.las"
        p.write_bytes(b"LASF" + bytes(40))
        with pytest.raises(FormatError):
            load_las(p)


class TestRaster:
    def test_roundtrip(self, tmp_path):
        rng = make_rng(22)
        bands = rng.uniform(-5, 5, (1, 12, 9))
        r = Raster((100.0, 250.0), 0.5, bands, nodata=-9999.0)
        p = tmp_path / "dsm.bin"
        save_raster(p, r)
        back = load_raster(p)
        assert back.origin == (100.0, 250.0)
        assert back.cell_size == 0.5
        assert back.nodata == -9999.0
        assert np.array_equal(back.bands, bands)

    def test_rgb_roundtrip(self, tmp_path):
        rng = make_rng(23)
        bands = rng.integers(0, 256, (3, 6, 7)).astype(np.uint8)
        r = Raster((0.0, 6.0), 1.0, bands)
        save_raster(tmp_path / "o.bin", r)
        back = load_raster(tmp_path / "o.bin")
        assert back.bands.dtype == np.uint8
        assert np.array_equal(back.bands, bands)

    def test_size_mismatch(self, tmp_path):
        r = Raster((0.0, 2.0), 1.0, np.zeros((1, 2, 2)))
        save_raster(tmp_path / "d.bin", r)
        # corrupt the sidecar to declare a larger grid
        side = tmp_path / "d.json"
        meta = json.loads(side.read_text())
        meta["width"] = 5
        side.write_text(json.dumps(meta))
        with pytest.raises(FormatError):
            load_raster(tmp_path / "d.bin")


class TestWorldFile:
    def test_parse(self, tmp_path):
        p = tmp_path / "o.wld"
        p.write_text("0.5\n0\n0\n-0.5\n100.25\n200.75\n")
        origin, cell = read_world_file(p)
        # world files give the center of the top-left pixel
        assert origin == (100.0, 201.0)
        assert cell == 0.5

    def test_rotation_rejected(self, tmp_path):
        p = tmp_path / "o.wld"
        p.write_text("0.5\n0.1\n0\n-0.5\n0\n0\n")
        with pytest.raises(FormatError):
            read_world_file(p)

    def test_nonsquare_rejected(self, tmp_path):
        p = tmp_path / "o.wld"
        p.write_text("0.5\n0\n0\n-0.25\n0\n0\n")
        with pytest.raises(FormatError):
            read_world_file(p)


class TestJsonAndHash:
    def test_write_json_stable(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        write_json(a, {"z": 1, "a": [2, 3]})
        write_json(b, {"a": [2, 3], "z": 1})
        assert a.read_bytes() == b.read_bytes()
        assert a.read_text().endswith("\n")

    def test_write_json_rejects_nan(self, tmp_path):
        with pytest.raises(ValueError):
            write_json(tmp_path / "a.json", {"x": float("nan")})

    def test_file_sha256(self, tmp_path):
        p = tmp_path / "f.bin"
        p.write_bytes(b"abc")
        # sha256 of "abc" is a published constant
        assert file_sha256(p) == (
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        )
