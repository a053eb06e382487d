"""
Scoring a segmentation
======================

Compare a slightly wrong segmentation with its reference: overlap,
boundary distance, shape and region statistics.
"""
import numpy as np

from voxelpipe.evaluate import (BinaryMask, overlap_metrics, region_metrics, shape_metrics,
                                surface_distances)

shape = (40, 40, 20)
grid = np.meshgrid(*[np.arange(n, dtype=float) for n in shape], indexing="ij")
ref = ((grid[0] - 20) ** 2 + (grid[1] - 20) ** 2 + (2 * (grid[2] - 10)) ** 2) < 12 ** 2
# shifted by two voxels, plus a small spurious blob
seg = np.roll(ref, 2, axis=0)
seg[2:4, 2:4, 2:4] = True

spacing = (0.7, 0.7, 2.5)
s, r = BinaryMask(seg, spacing), BinaryMask(ref, spacing)

for name, value in overlap_metrics(s, r).items():
    print(f"{name:>12}: {value:.4f}")
for name, value in surface_distances(s, r).items():
    print(f"{name:>18}: {value:.3f} mm")
print("reference volume: %.1f mm^3" % shape_metrics(r)["volume_mm3"])

regions = region_metrics(s, r)
print("detection rate", regions["detection_rate"], "false-positive regions", regions.n_false_positive_regions)
