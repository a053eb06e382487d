"""Random flips, rotations and isotropic scaling composed into one affine.

A sampled transform maps output voxel coordinates to input voxel coordinates
(the convention of :func:`voxelpipe.volume.resample`)::

    composed = T(center) @ S @ Rz @ Ry @ Rx @ F @ T(-center)

with ``center`` the geometric centre of the volume in voxel space.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionViolation
from .volume import Interpolation, Volume, resample, translation

AXES = "xyz"


@dataclass(frozen=True)
class AugmentSpec:
    flip_axes: tuple = ()
    rotation_range_deg: tuple = (-10.0, 10.0)
    scale_range_pct: tuple = (-10.0, 10.0)
    seed: int = 0
    world_space: bool = False

    def __post_init__(self):
        axes = tuple(a.lower() if isinstance(a, str) else AXES[a] for a in self.flip_axes)
        if any(a not in AXES for a in axes):
            raise PreconditionViolation(f"flip axes must be drawn from x, y, z: {self.flip_axes}")
        object.__setattr__(self, "flip_axes", axes)
        for name in ("rotation_range_deg", "scale_range_pct"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise PreconditionViolation(f"{name}: lower bound {lo} above upper bound {hi}")
        if 1.0 + self.scale_range_pct[0] / 100.0 <= 0:
            raise PreconditionViolation("scale_range_pct allows a non-positive scale factor")

    @classmethod
    def identity(cls) -> "AugmentSpec":
        return cls(flip_axes=(), rotation_range_deg=(0.0, 0.0), scale_range_pct=(0.0, 0.0))


@dataclass(frozen=True, eq=False)
class SampledTransform:
    flips: tuple
    euler_deg: tuple
    scale: float
    composed: np.ndarray

    def __eq__(self, other):
        return (isinstance(other, SampledTransform) and self.flips == other.flips
                and self.euler_deg == other.euler_deg and self.scale == other.scale
                and np.array_equal(self.composed, other.composed))

    def __hash__(self):
        return hash((self.flips, self.euler_deg, self.scale))

    @property
    def is_identity(self) -> bool:
        return np.array_equal(self.composed, np.eye(4))


def _rotation(axis, degrees):
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    i, j = [k for k in range(3) if k != axis]
    r = np.eye(4)
    r[i, i], r[i, j], r[j, i], r[j, j] = c, -s, s, c
    return r


def compose_transform(shape, flips=(False, False, False), euler_deg=(0.0, 0.0, 0.0), scale=1.0,
                      spacing=None) -> np.ndarray:
    """Voxel-space affine for the given parameters about the volume centre.

    With ``spacing`` the rotation and scaling act in millimetre space.
    """
    shape = np.asarray(shape, dtype=np.float64)
    center = (shape - 1.0) / 2.0
    f = np.diag([-1.0 if fl else 1.0 for fl in flips] + [1.0])
    r = _rotation(2, euler_deg[2]) @ _rotation(1, euler_deg[1]) @ _rotation(0, euler_deg[0])
    s = np.diag([scale, scale, scale, 1.0])
    core = s @ r
    if spacing is not None:
        z = np.diag(list(np.asarray(spacing, dtype=np.float64)) + [1.0])
        core = np.linalg.inv(z) @ core @ z
    return translation(center) @ core @ f @ translation(-center)


def sample_transform(spec: AugmentSpec, rng: np.random.Generator, shape, spacing=None) -> SampledTransform:
    """Draw flips, Euler angles and a scale factor uniformly from ``spec``.

    Draw order is fixed (flips x/y/z, angles x/y/z, scale) so a generator in
    a given state always yields the same transform.
    """
    flips = tuple(bool(rng.random() < 0.5) if a in spec.flip_axes else False for a in AXES)
    lo, hi = spec.rotation_range_deg
    angles = tuple(float(rng.uniform(lo, hi)) for _ in AXES)
    lo, hi = spec.scale_range_pct
    scale = 1.0 + float(rng.uniform(lo, hi)) / 100.0
    composed = compose_transform(shape, flips, angles, scale, spacing if spec.world_space else None)
    return SampledTransform(flips, angles, scale, composed)


def apply_transform(v: Volume, t: SampledTransform, interp=Interpolation.TRILINEAR) -> Volume:
    """Resample ``v`` through ``t`` on its own grid, padding with its minimum."""
    return resample(v, t.composed, v.shape, interp)


def apply_to_subject(volumes, t: SampledTransform, interps) -> dict:
    """Apply one transform to every source of a subject."""
    return {name: apply_transform(v, t, interps.get(name, Interpolation.TRILINEAR))
            for name, v in volumes.items()}
