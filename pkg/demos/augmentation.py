"""
Random spatial augmentation
===========================

Draw one random flip/rotation/scale transform and apply it to an image and
its label map together.
"""
import numpy as np

from voxelpipe.augment import AugmentSpec, apply_to_subject, sample_transform
from voxelpipe.volume import Interpolation, Volume

shape = (32, 32, 16)
grid = np.meshgrid(*[np.arange(n, dtype=float) for n in shape], indexing="ij")
r2 = (grid[0] - 12) ** 2 + (grid[1] - 18) ** 2 + 4 * (grid[2] - 8) ** 2
image = Volume(np.exp(-r2 / 60.0).astype(np.float32), np.eye(4))
label = Volume((r2 < 60).astype(np.uint8), np.eye(4))

spec = AugmentSpec(flip_axes=("x",), rotation_range_deg=(-15, 15), scale_range_pct=(-10, 10))
t = sample_transform(spec, np.random.default_rng(7), shape)
print("flips", t.flips, "angles", np.round(t.euler_deg, 2), "scale", round(t.scale, 3))

out = apply_to_subject({"image": image, "label": label}, t,
                       {"image": Interpolation.TRILINEAR, "label": Interpolation.NEAREST})
print("label values before:", np.unique(label.data), "after:", np.unique(out["label"].data))

# the label still sits on the bright part of the image
inside = out["label"].data[..., 0] > 0
print("mean image inside label: %.3f, outside: %.3f"
      % (out["image"].data[..., 0][inside].mean(), out["image"].data[..., 0][~inside].mean()))
