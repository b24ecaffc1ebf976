"""Shared fixtures.

Expensive artifacts (synthetic scenes, segmentations) are session-scoped
so the cost is paid once. Everything here is seeded; reruns are identical.
"""

import numpy as np
import pytest

from patchqc import (
    Box2D,
    PointCloud,
    build_patches,
    classify_ground,
    segment_cloud,
)
from patchqc.synth import BiasField, SceneSpec, generate_scene


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def plane_cloud(n, extent, noise, seed, slope=(0.0, 0.0), z0=0.0):
    """Noisy samples of z = z0 + ax + by over [0, extent]^2."""
    rng = make_rng(seed)
    xy = rng.uniform(0.0, extent, (n, 2))
    z = z0 + slope[0] * xy[:, 0] + slope[1] * xy[:, 1]
    if noise > 0:
        z = z + rng.normal(0.0, noise, n)
    return PointCloud(np.column_stack([xy, z]))


@pytest.fixture(scope="session")
def flat_scene():
    """30 m flat scene with +0.05 bias; small enough for quick reuse."""
    spec = SceneSpec(
        extent=(30.0, 30.0),
        als_density=8.0,
        dim_density=40.0,
        als_noise=0.02,
        dim_noise=0.09,
        bias=BiasField("constant", 0.05),
        seed=5,
    )
    als, dim, ortho, truth = generate_scene(spec)
    return {"spec": spec, "als": als, "dim": dim, "ortho": ortho, "truth": truth}


@pytest.fixture(scope="session")
def flat_pipeline(flat_scene):
    """Ground + segments + patches for the flat scene."""
    ground = classify_ground(flat_scene["als"])
    seg, feats = segment_cloud(ground)
    patches = build_patches(seg)
    return {**flat_scene, "ground": ground, "segmented": seg,
            "features": feats, "patches": patches}


@pytest.fixture(scope="session")
def scene_dir(tmp_path_factory):
    """Scene written to disk once, for CLI and pipeline file tests."""
    from patchqc.pipeline import run_synth

    spec = SceneSpec(
        extent=(30.0, 30.0),
        als_density=8.0,
        dim_density=40.0,
        als_noise=0.02,
        dim_noise=0.09,
        bias=BiasField("constant", 0.05),
        vegetation=(Box2D(2.0, 2.0, 7.0, 7.0),),
        shadow=(Box2D(22.0, 22.0, 28.0, 28.0),),
        seed=5,
    )
    out = tmp_path_factory.mktemp("scene")
    run_synth(spec, out)
    cfg = out / "qc.toml"
    cfg.write_text(
        "schema_version = 1\n\n"
        "[paths]\n"
        'als = "als.xyz"\n'
        'dim = "dim.xyz"\n'
        'ortho = "ortho.bin"\n'
        'out_dir = "out"\n'
    )
    return out


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One verdict line per acceptance criterion, independent of verbosity."""
    import re

    pattern = re.compile(r"test_acceptance\.py::test_c(\d+)_([a-z0-9_]+)")
    rows = []
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            match = pattern.search(getattr(report, "nodeid", ""))
            if match:
                verdict = "PASS" if outcome == "passed" else "FAIL"
                rows.append((int(match.group(1)), match.group(2), verdict))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, verdict in sorted(rows):
        label = name.replace("_", " ")
        terminalreporter.write_line(f"criterion {num:2d}  {label:<26} {verdict}")
