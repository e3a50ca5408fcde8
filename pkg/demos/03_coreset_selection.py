"""Why greedy minimax selection keeps coverage that random sampling loses.

Run: python3 demos/03_coreset_selection.py
"""

import numpy as np

from patchbank.coreset import coverage_radius, greedy_coreset, jl_project, random_subsample

rng = np.random.default_rng(7)

# Two well separated clusters, 1000 points each. A 1% random sample puts
# roughly 10 points in each cluster wherever density happens to land;
# greedy walks the farthest-point chain and spreads them out.
pts = np.concatenate([
    rng.normal((-4.0, 0.0), 0.5, (1000, 2)),
    rng.normal((4.0, 0.0), 0.5, (1000, 2)),
])
count = 20

greedy_sel = greedy_coreset(pts, count, seed=0)
random_sel = random_subsample(len(pts), count, seed=0)
print(f"selecting {count} of {len(pts)} points")
print(f"  greedy coverage radius: {coverage_radius(pts, greedy_sel):.4f}")
print(f"  random coverage radius: {coverage_radius(pts, random_sel):.4f}")

balance = np.sum(pts[greedy_sel][:, 0] < 0)
print(f"  greedy split across clusters: {balance} left / {count - balance} right")

# Selections are prefix-stable: asking for fewer points returns a prefix
# of the same chain, so sweeps over subsampling rates reuse one ordering.
prefix = greedy_coreset(pts, 5, seed=0)
print(f"  first-5 prefix of the 20-pick chain: {np.array_equal(prefix, greedy_sel[:5])}")

# High dimensional banks get a random projection first: distances survive
# well enough for selection while each step gets much cheaper.
hi = rng.standard_normal((2000, 512))
lo = jl_project(hi, 64, seed=1)
i, j = rng.integers(0, 2000, 60), rng.integers(0, 2000, 60)
ratios = [
    np.linalg.norm(lo[a] - lo[b]) / np.linalg.norm(hi[a] - hi[b])
    for a, b in zip(i, j)
    if not np.array_equal(hi[a], hi[b])
]
print(f"\nprojected 512 -> 64 dims; distance ratio spread "
      f"[{min(ratios):.3f}, {max(ratios):.3f}] around 1")

sel_proj = greedy_coreset(lo, 50, seed=2)
sel_full = greedy_coreset(hi, 50, seed=2)
r_proj = coverage_radius(hi, sel_proj)
r_full = coverage_radius(hi, sel_full)
print(f"coverage in the original space: projected pick {r_proj:.3f} vs exact pick {r_full:.3f}")
