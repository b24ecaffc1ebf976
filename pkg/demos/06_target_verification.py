"""Cross-check surveyed targets against the reference cloud.

Before trusting the laser reference, its height datum is verified at
independently surveyed targets: fit a local plane around each target,
take the vertical offset, and reject offsets outside three standard
deviations. The demo plants 30 consistent targets and one with a gross
20 cm blunder, which the rejection step must isolate.

Run:  python3 demos/06_target_verification.py
"""

import numpy as np

from patchqc import PointCloud
from patchqc.measures import ReferenceTarget, crossverify_targets

rng = np.random.Generator(np.random.PCG64(25))

# flat reference cloud with 2 cm vertical noise
xy = rng.uniform(0.0, 50.0, size=(50_000, 2))
z = rng.normal(0.0, 0.02, 50_000)
als = PointCloud(np.column_stack([xy, z]))

targets = [
    ReferenceTarget(
        f"t{i:02d}",
        float(rng.uniform(5, 45)),
        float(rng.uniform(5, 45)),
        float(rng.normal(0.01, 0.02)),
    )
    for i in range(1, 31)
]
targets.append(ReferenceTarget("blunder", 25.0, 25.0, 0.20))

check = crossverify_targets(targets, als, radius=2.0)

print(f"{'id':<8} {'residual':>9}  status")
for r in check.results:
    res = "   --   " if r.residual is None else f"{r.residual:+.3f} m"
    print(f"{r.id:<8} {res:>9}  {r.status}")
print()
print(
    f"before rejection: mu = {check.mu_initial:+.4f} m, "
    f"sigma = {check.sigma_initial:.4f} m"
)
print(
    f"after rejection:  mu = {check.mu:+.4f} m, sigma = {check.sigma:.4f} m "
    f"({check.n_rejected} target(s) rejected)"
)
