"""
The command line pipeline end to end
====================================

Write a toy dataset, then drive every action through ``voxelpipe`` the way
a shell script would.
"""
import tempfile
from pathlib import Path

import numpy as np

from voxelpipe.cli import main
from voxelpipe.nifti import write_nifti
from voxelpipe.volume import Volume

root = Path(tempfile.mkdtemp())
rng = np.random.default_rng(5)
grid = np.meshgrid(*[np.arange(n, dtype=float) for n in (16, 16, 10)], indexing="ij")
for d in ("images", "labels", "preds"):
    (root / d).mkdir()
for i in range(8):
    c = rng.uniform(5, 11, size=3)
    blob = np.exp(-sum((g - x) ** 2 for g, x in zip(grid, c)) / 12.0)
    write_nifti(Volume((800 * blob + rng.normal(0, 10, blob.shape) + 50).astype(np.float32), np.eye(4)),
                root / "images" / f"sub{i}_T1.nii.gz")
    write_nifti(Volume((blob > 0.4).astype(np.int16), np.eye(4)), root / "labels" / f"sub{i}_seg.nii.gz")
    # a "prediction" that thresholds slightly differently
    write_nifti(Volume((blob > 0.5).astype(np.int16), np.eye(4)), root / "preds" / f"sub{i}_pred.nii.gz")

config = root / "pipeline.ini"
config.write_text(f"""
[system]
model_dir = {root / 'model'}
num_lanes = 2

[sampler]
sampler = weighted
weight_source = label
window_size = 8, 8, 6
sample_per_volume = 2

[partition]
ratios = 0.5, 0.25, 0.25

[normalisation]
histogram = true

[evaluation]
seg_source = pred
ref_source = label
metrics = dice, relative_volume_difference, mean_abs_distance, hausdorff95

[image]
path_to_search = {root / 'images'}
filename_contains = T1

[label]
path_to_search = {root / 'labels'}
filename_contains = seg
interp = nearest

[pred]
path_to_search = {root / 'preds'}
filename_contains = pred
interp = nearest
""")

for action in ("inspect", "partition", "normalise-train", "sample", "aggregate-identity", "evaluate"):
    print(f"\n$ voxelpipe {action} -c pipeline.ini")
    code = main([action, "-c", str(config)])
    print("exit code", code)

# a typo in a key is rejected before anything runs
print("\n$ voxelpipe sample -c pipeline.ini sampler.windw_size=4")
print("exit code", main(["sample", "-c", str(config), "sampler.windw_size=4"]))
