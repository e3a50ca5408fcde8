"""How a feature map becomes a grid of locally aware patch vectors.

Run: python3 demos/02_patch_features.py
"""

import numpy as np

from patchbank.patchify import PatchConfig, bilinear_resize, local_patch_features, merge_hierarchies

rng = np.random.default_rng(0)

# One 6x5 map with 4 channels. Each output position averages its 3x3
# neighborhood (zero padded at the border) and then pools channels down
# to the requested width.
fm = rng.standard_normal((4, 6, 5)).astype(np.float32)
cfg = PatchConfig(patch_size=3, stride=1, level_dim=4, output_dim=4, levels=(2,))
grid = local_patch_features(fm, cfg)
print(f"map {fm.shape} -> grid {grid.rows}x{grid.cols}, dim {grid.dim}")

# Border positions really do see the zero padding: a constant map stays
# constant in the interior but shrinks at corners (4 of 9 taps inside).
const = np.ones((1, 4, 4), dtype=np.float32)
g = local_patch_features(const, PatchConfig(3, 1, 1, 1, (2,)))
vals = g.as_grid()[..., 0]
print(f"constant map corner {vals[0, 0]:.4f} (4/9), edge {vals[0, 1]:.4f} (6/9), center {vals[1, 1]:.4f}")

# Two hierarchy levels merge by rescaling the coarse one up to the fine
# grid and concatenating channels before the final pooling. Each level is
# patchified on its own resolution first, exactly as the loader does it.
fine = rng.standard_normal((4, 8, 8)).astype(np.float32)
coarse = rng.standard_normal((8, 4, 4)).astype(np.float32)
mcfg = PatchConfig(patch_size=3, stride=1, level_dim=6, output_dim=10, levels=(2, 3))
merged = merge_hierarchies([local_patch_features(m, mcfg) for m in (fine, coarse)], mcfg)
print(f"levels (4ch 8x8) + (8ch 4x4) -> merged grid {merged.rows}x{merged.cols}, dim {merged.dim}")

# The resizer is plain separable bilinear interpolation; doubling a ramp
# keeps its endpoints and fills midpoints.
ramp = np.array([[0.0, 1.0, 2.0, 3.0]])
print(f"ramp upsampled x2: {np.round(bilinear_resize(ramp, 1, 8)[0], 3)}")

# p=1, matched dims: the grid is literally the reshaped feature map, so
# nothing is lost when local aggregation is disabled.
identity_cfg = PatchConfig(patch_size=1, stride=1, level_dim=4, output_dim=4, levels=(2,))
g2 = local_patch_features(fm, identity_cfg)
print(f"identity reduction exact: {np.array_equal(g2.features, fm.reshape(4, -1).T)}")
