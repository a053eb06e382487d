"""In-memory volumes, voxel/world geometry and the resampling engine.

Arrays are spatial-first, ``data[x, y, z, c]``, and affines follow the
column-vector convention ``world = A @ [i, j, k, 1]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import AffineSingular, PreconditionViolation

SUPPORTED_DTYPES = (np.uint8, np.int16, np.int32, np.float32, np.float64)

# max condition number accepted before an affine is treated as singular
_MAX_CONDITION = 1e12
# resampling coordinates this close to an integer snap onto it
_SNAP = 1e-9


class Interpolation(str, Enum):
    NEAREST = "nearest"
    TRILINEAR = "trilinear"


@dataclass(frozen=True, eq=False)
class Volume:
    """Immutable N-D voxel grid with a voxel-to-world affine.

    ``data`` is stored 4-D ``[x, y, z, channel]``; 3-D input gains a unit
    channel axis.  The array is kept read-only.
    """

    data: np.ndarray
    affine: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 3:
            data = data[..., np.newaxis]
        if data.ndim != 4:
            raise PreconditionViolation(f"volume data must be 3-D or 4-D, got {data.ndim}-D")
        if min(data.shape) < 1:
            raise PreconditionViolation(f"empty volume axis in shape {data.shape}")
        if data.dtype.type not in SUPPORTED_DTYPES:
            raise PreconditionViolation(
                f"dtype {data.dtype} not in supported set (u8, i16, i32, f32, f64)")
        if not data.dtype.isnative:
            data = data.astype(data.dtype.newbyteorder("="))
        if data.flags.writeable:
            data = data.view()
            data.flags.writeable = False

        affine = np.array(self.affine, dtype=np.float64)
        if affine.shape != (4, 4):
            raise PreconditionViolation(f"affine must be 4x4, got {affine.shape}")
        if not np.array_equal(affine[3], [0.0, 0.0, 0.0, 1.0]):
            raise PreconditionViolation("affine last row must be (0, 0, 0, 1)")
        if not np.all(np.isfinite(affine)) or abs(np.linalg.det(affine[:3, :3])) == 0:
            raise AffineSingular("affine 3x3 block is singular")
        affine.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "affine", affine)

    @property
    def shape(self) -> tuple:
        """Spatial shape ``(X, Y, Z)``."""
        return tuple(self.data.shape[:3])

    @property
    def n_channels(self) -> int:
        return self.data.shape[3]

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def spacing(self) -> np.ndarray:
        return np.linalg.norm(self.affine[:3, :3], axis=0)

    def with_data(self, data, affine=None) -> "Volume":
        return Volume(data, self.affine if affine is None else affine)

    def __repr__(self):
        sp = ", ".join(f"{s:g}" for s in self.spacing)
        return f"Volume(shape={self.shape}, channels={self.n_channels}, dtype={self.dtype}, spacing=({sp}))"


def checked_inverse(matrix) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise AffineSingular("matrix contains non-finite entries")
    try:
        cond = np.linalg.cond(m)
        if not np.isfinite(cond) or cond > _MAX_CONDITION:
            raise AffineSingular(f"matrix is singular (condition number {cond:.3g})")
        return np.linalg.inv(m)
    except np.linalg.LinAlgError as exc:
        raise AffineSingular(str(exc)) from exc


def voxel_to_world(v: Volume, ijk) -> np.ndarray:
    """Map voxel coordinates (shape ``(3,)`` or ``(N, 3)``) to world mm."""
    p = np.asarray(ijk, dtype=np.float64)
    return p @ v.affine[:3, :3].T + v.affine[:3, 3]


def world_to_voxel(v: Volume, xyz) -> np.ndarray:
    """Map world mm (shape ``(3,)`` or ``(N, 3)``) to real voxel coordinates."""
    inv = checked_inverse(v.affine)
    p = np.asarray(xyz, dtype=np.float64)
    return p @ inv[:3, :3].T + inv[:3, 3]


def translation(offset) -> np.ndarray:
    t = np.eye(4)
    t[:3, 3] = offset
    return t


def min_intensity(v: Volume):
    return v.data.min()


def cast_like(values: np.ndarray, dtype) -> np.ndarray:
    """Cast f64 values to ``dtype``; integer targets round half-to-even and saturate."""
    dtype = np.dtype(dtype)
    if dtype.kind in "iu":
        info = np.iinfo(dtype)
        return np.clip(np.rint(values), info.min, info.max).astype(dtype)
    return values.astype(dtype)


def _snap(coords: np.ndarray) -> np.ndarray:
    rounded = np.rint(coords)
    close = np.abs(coords - rounded) <= _SNAP
    return np.where(close, rounded, coords)


def _sample_nearest(data, coords, pad_value):
    shape = np.array(data.shape[:3])[:, None]
    idx = np.rint(coords).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < shape), axis=0)
    idx = np.where(inside, idx, 0)
    out = data[idx[0], idx[1], idx[2], :]
    pad = np.asarray(pad_value).astype(data.dtype)
    out[~inside] = pad
    return out


def _sample_trilinear(data, coords, pad_value):
    # a voxel owns [i - 0.5, i + 0.5]; reads outside every footprint are padding,
    # reads in the outer half-voxel clamp to the edge sample
    n = np.array(data.shape[:3], dtype=np.float64)[:, None]
    inside = np.all((coords >= -0.5) & (coords <= n - 0.5), axis=0)
    c = np.clip(coords, 0.0, n - 1.0)
    lo = np.floor(c).astype(np.int64)
    lo = np.minimum(lo, np.maximum(n.astype(np.int64) - 2, 0))
    frac = c - lo
    hi = np.minimum(lo + 1, n.astype(np.int64) - 1)

    src = data.astype(np.float64, copy=False)
    out = np.zeros((coords.shape[1], data.shape[3]), dtype=np.float64)
    for cx in (0, 1):
        ix = hi[0] if cx else lo[0]
        wx = frac[0] if cx else 1.0 - frac[0]
        for cy in (0, 1):
            iy = hi[1] if cy else lo[1]
            wy = frac[1] if cy else 1.0 - frac[1]
            for cz in (0, 1):
                iz = hi[2] if cz else lo[2]
                wz = frac[2] if cz else 1.0 - frac[2]
                w = wx * wy * wz
                nz = w != 0.0
                if np.any(nz):
                    out[nz] += w[nz, None] * src[ix[nz], iy[nz], iz[nz], :]
    out[~inside] = pad_value
    return cast_like(out, data.dtype)


def resample(v: Volume, t, out_shape=None, interp=Interpolation.TRILINEAR, pad_value=None) -> Volume:
    """Resample ``v`` onto a new grid.

    Output voxel ``i`` takes the value of ``v`` at voxel coordinate ``t @ i``
    (``t`` is a 4x4 voxel-to-voxel map from output to input).  Reads outside
    the input return ``pad_value``, which defaults to the volume minimum.
    The output affine is ``v.affine @ t``.
    """
    t = np.asarray(t, dtype=np.float64)
    checked_inverse(t)
    out_shape = tuple(int(s) for s in (v.shape if out_shape is None else out_shape))
    if len(out_shape) != 3 or min(out_shape) < 1:
        raise PreconditionViolation(f"out_shape must be 3 positive ints, got {out_shape}")
    interp = Interpolation(interp)
    if pad_value is None:
        pad_value = min_intensity(v)

    grid = np.indices(out_shape, dtype=np.float64).reshape(3, -1)
    coords = _snap(t[:3, :3] @ grid + t[:3, 3:4])
    if interp is Interpolation.NEAREST:
        values = _sample_nearest(v.data, coords, pad_value)
    else:
        values = _sample_trilinear(v.data, coords, float(pad_value))
    out = values.reshape(out_shape + (v.n_channels,))
    return Volume(out, v.affine @ t)


def pad(v: Volume, border, mode="edge", constant=0) -> Volume:
    """Grow each spatial axis by ``border`` voxels on both sides.

    ``border`` may be a 3-vector or a per-axis list of ``(before, after)``
    pairs.  ``mode`` is ``"edge"`` (replicate) or ``"constant"``.  World
    coordinates of the original voxels are unchanged.
    """
    widths = _pad_widths(border)
    if not any(b or a for b, a in widths):
        return v
    if mode == "edge":
        data = np.pad(v.data, widths + [(0, 0)], mode="edge")
    elif mode == "constant":
        data = np.pad(v.data, widths + [(0, 0)], mode="constant", constant_values=constant)
    else:
        raise PreconditionViolation(f"unknown pad mode {mode!r}")
    before = [b for b, _ in widths]
    return Volume(data, v.affine @ translation([-b for b in before]))


def crop(v: Volume, border) -> Volume:
    """Inverse of :func:`pad`."""
    widths = _pad_widths(border)
    sl = tuple(slice(b, n - a) for (b, a), n in zip(widths, v.shape))
    if any(s.start >= s.stop for s in sl):
        raise PreconditionViolation(f"crop {border} removes whole axis of {v.shape}")
    before = [b for b, _ in widths]
    return Volume(v.data[sl], v.affine @ translation(before))


def _pad_widths(border):
    widths = []
    for b in border:
        pair = (b, b) if np.isscalar(b) else tuple(b)
        if len(pair) != 2 or min(pair) < 0:
            raise PreconditionViolation(f"pad widths must be non-negative, got {border}")
        widths.append((int(pair[0]), int(pair[1])))
    if len(widths) != 3:
        raise PreconditionViolation("border must have 3 entries")
    return widths
