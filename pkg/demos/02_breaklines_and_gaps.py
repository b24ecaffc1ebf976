"""Show that patches never straddle a height step or cover a data hole.

The scene has a 20 cm raised platform in the middle and a handful of
circular gaps punched into the reference cloud. Sampling units that mix
two height levels would corrupt the plane fit, and units over gaps would
rest on interpolation artifacts, so both must be avoided by construction.

Run:  python3 demos/02_breaklines_and_gaps.py
"""

import numpy as np

from patchqc import Box2D, build_patches, classify_ground, segment_cloud
from patchqc.segmentation import SegParams
from patchqc.synth import Disc, Hole, SceneSpec, Step, generate_scene

spec = SceneSpec(
    extent=(50.0, 50.0),
    als_density=8.0,
    dim_density=40.0,
    als_noise=0.005,
    dim_noise=0.05,
    steps=(Step(Box2D(15.0, 15.0, 35.0, 35.0), 0.2),),
    holes=(
        Hole(Disc(10.0, 40.0, 1.2), target="als"),
        Hole(Disc(42.0, 8.0, 1.5), target="als"),
        Hole(Disc(25.0, 44.0, 1.0), target="als"),
    ),
    seed=21,
)
als, dim, ortho, truth = generate_scene(spec)

ground = classify_ground(als)
# a tight plane tolerance keeps the two levels in separate segments
segmented, _ = segment_cloud(ground, SegParams(max_plane_dist=0.05))
patches = build_patches(segmented)

low = high = straddling = 0
for patch in patches:
    pts = segmented.points[patch.als_indices]
    levels = truth.base_z(pts[:, 0], pts[:, 1])
    if levels.max() - levels.min() > 1e-9:
        straddling += 1
    elif levels[0] > 0.1:
        high += 1
    else:
        low += 1
print(f"{len(patches)} patches: {low} on the lower level, {high} on the platform")
print(f"patches mixing both levels: {straddling} (must be 0)")

# the actual guarantee around holes: every 0.5 m occupancy cell of every
# patch still contains at least one reference point (grazing a hole's rim
# is fine, standing over emptied cells is not)
empty_cells = 0
for patch in patches:
    mask = segmented.segment_id == patch.segment_id
    pts = segmented.points[mask]
    b = patch.bounds
    inside = b.contains(pts[:, 0], pts[:, 1])
    cols = np.floor((pts[inside, 0] - b.xmin) / 0.5).astype(int)
    rows = np.floor((pts[inside, 1] - b.ymin) / 0.5).astype(int)
    filled = set(zip(rows.tolist(), cols.tolist()))
    empty_cells += 16 - len({rc for rc in filled if rc[0] < 4 and rc[1] < 4})
print(f"empty occupancy cells under any patch: {empty_cells} (must be 0)")
