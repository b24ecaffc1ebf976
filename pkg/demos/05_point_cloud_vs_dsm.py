"""Measure what rasterizing a point cloud does to its error figures.

The same evaluated cloud is assessed twice over one patch set: once as
points, once as a 25 cm surface-model raster interpolated from those
points by inverse distance weighting. Interpolation averages noise away,
so the spread drops; it can also shift the mean slightly, which is worth
knowing before comparing products delivered in different forms.

Run:  python3 demos/05_point_cloud_vs_dsm.py
"""

from patchqc import build_patches, classify_ground, segment_cloud
from patchqc.measures import evaluate, format_measures
from patchqc.screening import ScreenConfig
from patchqc.synth import BiasField, SceneSpec, generate_scene, idw_dsm

spec = SceneSpec(
    extent=(40.0, 40.0),
    als_density=8.0,
    dim_density=60.0,
    als_noise=0.02,
    dim_noise=0.09,
    bias=BiasField("constant", 0.03),
    seed=24,
)
als, dim, ortho, truth = generate_scene(spec)

segmented, _ = segment_cloud(classify_ground(als))
patches = build_patches(segmented)
config = ScreenConfig(use_shadow=False, use_vegetation=False)
screened = evaluate(patches, dim, screen_config=config)
ids = list(screened.valid_ids)

dsm = idw_dsm(dim, cell=0.25)
print(f"surface model: {dsm.bands.shape[2]} x {dsm.bands.shape[1]} cells of 0.25 m")

# the shared patch set makes the two numbers directly comparable
as_points = evaluate(patches, dim, patch_ids=ids).block
as_raster = evaluate(patches, dsm, patch_ids=ids).block

print()
print(f"{'source':<14} {'M_MD; STD_MD; A_STD':>22}")
print(f"{'point cloud':<14} {format_measures(as_points):>22}")
print(f"{'IDW raster':<14} {format_measures(as_raster):>22}")
print()
gap = as_raster.m_md - as_points.m_md
print(f"rasterizing moved the block mean by {gap * 100:+.2f} cm")
print(
    f"and reduced the spread from {as_points.a_std:.3f} m "
    f"to {as_raster.a_std:.3f} m (noise averaged out by interpolation)"
)
