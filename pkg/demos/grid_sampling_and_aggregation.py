"""
Sliding windows over a volume
=============================

Cut a volume into fixed-size windows with a border margin, pretend each
window went through a network, and stitch the interiors back together.
"""
import numpy as np

from voxelpipe.aggregate import OutputCanvas
from voxelpipe.sample import GridSpec, grid_positions, grid_sample
from voxelpipe.volume import Volume

rng = np.random.default_rng(0)
v = Volume(rng.normal(size=(23, 17, 9)).astype(np.float32), np.diag([0.8, 0.8, 2.0, 1.0]))

# windows of 10 x 10 x 6 voxels keep an interior of 6 x 6 x 4
grid = GridSpec(window_size=(10, 10, 6), border=(2, 2, 1))
positions = grid_positions(v.shape, grid)
print(len(positions), "windows, stride", grid.stride)
print("x starts:", sorted({p[0] for p in positions}))

canvas = OutputCanvas.like(v, grid, subject_id="demo")
for window in grid_sample({"image": v}, grid, "demo"):
    # stand-in for inference: the identity network
    canvas.add(window.patches["image"], window.spatial_start)

print("windows still missing:", len(canvas.missing_windows))
out = canvas.finalize()
print("reassembled volume equals input:", np.array_equal(out.data, v.data))
