"""Turning head annotations into density maps.

Every annotated head becomes a small Gaussian with unit mass, so the map
integrates to the head count. The adaptive kernel widens each Gaussian in
sparse regions and narrows it where heads are packed together.

Run: python demos/01_density_ground_truth.py
"""

import numpy as np

from psnet.density import PointSet, adaptive_kernel_density, adaptive_sigma, fixed_kernel_density, sum_pool_downsample

rng = np.random.default_rng(0)

# A dense cluster in the top-left corner and a few stragglers elsewhere.
cluster = rng.normal([20, 20], 3, size=(25, 2))
loose = rng.uniform(40, 95, size=(6, 2))
points = PointSet(np.clip(np.vstack([cluster, loose]), 0, 95), width=96, height=96)
print(f"{len(points)} heads annotated")

fixed = fixed_kernel_density(points, sigma=4.0)
adaptive = adaptive_kernel_density(points, k=3, beta=0.3)
print(f"fixed kernel sums to    {fixed.sum():.6f}")
print(f"adaptive kernel sums to {adaptive.sum():.6f}")

sigmas = adaptive_sigma(points)
print(f"sigma inside the cluster  ~ {np.median(sigmas[:25]):.2f} px")
print(f"sigma for the stragglers  ~ {np.median(sigmas[25:]):.2f} px")

# The network predicts at 1/8 resolution; sum pooling keeps the count.
target = sum_pool_downsample(adaptive, 8)
print(f"training target {target.shape}, sum {target.sum():.6f}")

# A coarse text rendering, square-root scaled so the stragglers show up.
shades = " .:-=+*#%@"
scaled = (np.sqrt(target / target.max()) * (len(shades) - 1)).astype(int)
for row in scaled:
    print("  " + "".join(shades[v] * 2 for v in row))
