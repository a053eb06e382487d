"""
Reading and writing NIfTI volumes
=================================

Build a small volume with an oblique affine, write it compressed and
uncompressed, and read it back.
"""
import tempfile
from pathlib import Path

import numpy as np

from voxelpipe.nifti import read_nifti, write_nifti
from voxelpipe.volume import Volume, voxel_to_world

out = Path(tempfile.mkdtemp())

# a 30 degree rotation about z with 1 x 1 x 3 mm voxels
theta = np.deg2rad(30)
affine = np.eye(4)
affine[:3, :3] = np.array([[np.cos(theta), -np.sin(theta), 0],
                           [np.sin(theta), np.cos(theta), 0],
                           [0, 0, 1]]) @ np.diag([1.0, 1.0, 3.0])
affine[:3, 3] = (-40, 12, 7.5)

data = np.arange(6 * 5 * 4, dtype=np.int16).reshape(6, 5, 4)
v = Volume(data, affine)
print(v)

# .nii.gz is chosen by the file name; gzip output is byte-stable
plain = write_nifti(v, out / "ramp.nii")
packed = write_nifti(v, out / "ramp.nii.gz")
print("sizes:", plain.stat().st_size, "bytes raw,", packed.stat().st_size, "bytes gzipped")

back, header = read_nifti(packed)
print("data identical:", np.array_equal(back.data, v.data))
print("max affine error:", np.abs(back.affine - v.affine).max())
print("sform_code", header.sform_code, "qform_code", header.qform_code)

# world position of the far corner voxel
print("corner in mm:", voxel_to_world(back, [5, 4, 3]))
