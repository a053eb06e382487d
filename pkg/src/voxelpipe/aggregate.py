"""Reassemble per-window outputs into subject volumes."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import IncompleteCoverage, PreconditionViolation, UnexpectedWindow
from .nifti import write_nifti
from .sample import GridSpec, grid_padding, grid_positions, scaling_transform
from .volume import Interpolation, Volume, resample

LABEL_DTYPE = np.int16
REGRESSION_DTYPE = np.float32


class OutputCanvas:
    """Output buffer for one subject filled window by window.

    Each submitted window writes its interior (the window minus ``border`` on
    every side) at the matching original coordinates.  Where clamped edge
    windows overlap, the later write wins.
    """

    def __init__(self, subject_id, shape, grid: GridSpec, n_channels=1, dtype=REGRESSION_DTYPE,
                 affine=None):
        self.subject_id = subject_id
        self.shape = tuple(int(s) for s in shape)
        self.grid = grid
        self.data = np.zeros(self.shape + (n_channels,), dtype=dtype)
        self.written_mask = np.zeros(self.shape, dtype=bool)
        self.affine = np.eye(4) if affine is None else np.asarray(affine, dtype=np.float64)
        self._expected = set(grid_positions(self.shape, grid))
        self._leading = tuple(b for b, _ in grid_padding(self.shape, grid))
        self.submitted = set()

    @classmethod
    def like(cls, v: Volume, grid: GridSpec, subject_id="", n_channels=None, dtype=None):
        return cls(subject_id, v.shape, grid, n_channels or v.n_channels,
                   dtype or v.dtype, v.affine)

    @property
    def missing_windows(self) -> set:
        return self._expected - self.submitted

    def add(self, patch, spatial_start):
        grid_aggregate(self, patch, spatial_start)

    def finalize(self) -> Volume:
        missing = int((~self.written_mask).sum())
        if missing:
            raise IncompleteCoverage(missing)
        return Volume(self.data.copy(), self.affine)

    def write(self, output_dir, suffix="_niftynet_out.nii.gz") -> Path:
        out = Path(output_dir) / f"{self.subject_id}{suffix}"
        write_nifti(self.finalize(), out)
        return out


def grid_aggregate(canvas: OutputCanvas, patch, spatial_start):
    """Write the interior of one window output into ``canvas``."""
    start = tuple(int(s) for s in spatial_start)
    if start not in canvas._expected:
        raise UnexpectedWindow(f"start {start} is not a grid position for shape {canvas.shape}")
    patch = np.asarray(patch)
    if patch.ndim == 3:
        patch = patch[..., np.newaxis]
    window, border = canvas.grid.window_size, canvas.grid.border
    if patch.shape[:3] != window or patch.shape[3] != canvas.data.shape[3]:
        raise PreconditionViolation(
            f"patch shape {patch.shape} does not match window {window} x {canvas.data.shape[3]} channels")

    src, dst = [], []
    for s, w, b, lead, n in zip(start, window, border, canvas._leading, canvas.shape):
        lo = s + b - lead  # original coordinate of the first interior voxel
        hi = min(lo + w - 2 * b, n)
        src.append(slice(b, b + hi - lo))
        dst.append(slice(lo, hi))
    canvas.data[tuple(dst)] = patch[tuple(src)]
    canvas.written_mask[tuple(dst)] = True
    canvas.submitted.add(start)


def resize_aggregate(sample_out, original_shape, interp=Interpolation.TRILINEAR, affine=None) -> Volume:
    """Resample a fixed-size output back onto the original grid.

    ``sample_out`` is a Volume or an array; the result carries ``affine``
    (the original volume's) when given.
    """
    if not isinstance(sample_out, Volume):
        sample_out = Volume(np.asarray(sample_out), np.eye(4))
    original_shape = tuple(int(s) for s in original_shape)
    if len(original_shape) != 3 or min(original_shape) < 1:
        raise PreconditionViolation(f"original_shape must be 3 positive ints, got {original_shape}")
    t = scaling_transform(sample_out.shape, original_shape)
    out = resample(sample_out, t, original_shape, interp)
    return Volume(out.data, out.affine if affine is None else affine)
