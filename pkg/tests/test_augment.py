import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voxelpipe.augment import (AugmentSpec, SampledTransform, apply_to_subject, apply_transform,
                               compose_transform, sample_transform)
from voxelpipe.errors import PreconditionViolation
from voxelpipe.volume import Interpolation, Volume


def smooth_volume(shape=(24, 24, 24)):
    grid = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in shape], indexing="ij")
    center = [(n - 1) / 2 for n in shape]
    r2 = sum((g - c) ** 2 for g, c in zip(grid, center))
    return Volume(100.0 * np.exp(-r2 / (2 * 5.0 ** 2)), np.eye(4))


def test_zero_range_is_identity(rng):
    t = sample_transform(AugmentSpec.identity(), rng, (5, 6, 7))
    assert t.is_identity
    v = Volume(rng.integers(0, 9, size=(5, 6, 7)).astype(np.int16), np.eye(4))
    for interp in Interpolation:
        np.testing.assert_array_equal(apply_transform(v, t, interp).data, v.data)


def test_same_seed_same_transform():
    spec = AugmentSpec(flip_axes=("x", "z"))
    a = sample_transform(spec, np.random.default_rng(11), (8, 8, 8))
    b = sample_transform(spec, np.random.default_rng(11), (8, 8, 8))
    assert a == b
    assert a != sample_transform(spec, np.random.default_rng(12), (8, 8, 8))


def test_scale_monte_carlo_mean():
    rng = np.random.default_rng(0)
    scales = [sample_transform(AugmentSpec(), rng, (4, 4, 4)).scale for _ in range(10_000)]
    assert abs(np.mean(scales) - 1.0) < 0.01
    assert 0.9 <= min(scales) and max(scales) <= 1.1


def test_angles_within_range():
    rng = np.random.default_rng(1)
    spec = AugmentSpec(rotation_range_deg=(-5.0, 15.0))
    for _ in range(200):
        t = sample_transform(spec, rng, (4, 4, 4))
        assert all(-5.0 <= a <= 15.0 for a in t.euler_deg)


def test_flip_probability_half():
    rng = np.random.default_rng(2)
    spec = AugmentSpec(flip_axes=("y",), rotation_range_deg=(0, 0), scale_range_pct=(0, 0))
    flips = [sample_transform(spec, rng, (4, 4, 4)).flips for _ in range(4000)]
    assert all(not f[0] and not f[2] for f in flips)
    assert abs(np.mean([f[1] for f in flips]) - 0.5) < 0.03


def test_double_flip_identity(rng):
    v = Volume(rng.normal(size=(5, 4, 3)).astype(np.float32), np.eye(4))
    m = compose_transform(v.shape, flips=(True, False, False))
    t = SampledTransform((True, False, False), (0.0, 0.0, 0.0), 1.0, m)
    once = apply_transform(v, t)
    np.testing.assert_array_equal(once.data[..., 0], v.data[::-1, :, :, 0])
    np.testing.assert_array_equal(apply_transform(once, t).data, v.data)


def test_composition_order_and_centre():
    shape = (5, 5, 5)
    m = compose_transform(shape, flips=(True, False, False), euler_deg=(0, 0, 90), scale=2.0)
    centre = np.array([2.0, 2.0, 2.0, 1.0])
    np.testing.assert_allclose(m @ centre, centre, atol=1e-12)
    # a unit step along x is flipped, then rotated 90 deg about z, then doubled
    step = m @ np.array([3.0, 2.0, 2.0, 1.0]) - centre
    np.testing.assert_allclose(step[:3], [0.0, -2.0, 0.0], atol=1e-12)


def test_world_space_accounts_for_spacing():
    spacing = (1.0, 2.0, 1.0)
    m = compose_transform((5, 5, 5), euler_deg=(0, 0, 90), spacing=spacing)
    # one voxel along y is 2 mm; rotated onto x that is 2 voxels
    step = m @ np.array([2.0, 3.0, 2.0, 1.0]) - m @ np.array([2.0, 2.0, 2.0, 1.0])
    np.testing.assert_allclose(step[:3], [-2.0, 0.0, 0.0], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_nearest_label_closure(seed):
    r = np.random.default_rng(seed)
    labels = Volume(r.integers(0, 3, size=(7, 6, 5)).astype(np.uint8), np.eye(4))
    spec = AugmentSpec(flip_axes=("x", "y", "z"), rotation_range_deg=(-30, 30), scale_range_pct=(-20, 20))
    t = sample_transform(spec, r, labels.shape)
    out = apply_transform(labels, t, Interpolation.NEAREST)
    assert out.shape == labels.shape
    assert set(np.unique(out.data)) <= {0, 1, 2}


def test_rotation_round_trip():
    v = smooth_volume()
    rng_ = float(v.data.max() - v.data.min())
    for theta in (5.0, 10.0, 20.0):
        fwd = SampledTransform((False,) * 3, (0.0, 0.0, theta), 1.0,
                               compose_transform(v.shape, euler_deg=(theta / 2, 0.0, theta)))
        back = SampledTransform((False,) * 3, (0.0, 0.0, -theta), 1.0, np.linalg.inv(fwd.composed))
        out = apply_transform(apply_transform(v, fwd), back)
        assert np.mean(np.abs(out.data - v.data)) < 0.02 * rng_


def test_same_transform_for_all_sources(rng):
    shape = (9, 8, 7)
    coords = np.meshgrid(*[np.arange(n) for n in shape], indexing="ij")
    image = Volume(coords[0].astype(np.float64) + 10 * coords[1] + 100 * coords[2], np.eye(4))
    label = Volume((coords[0] + 10 * coords[1] + 100 * coords[2]).astype(np.int32), np.eye(4))
    t = sample_transform(AugmentSpec(flip_axes=("x",), rotation_range_deg=(-20, 20)), rng, shape)
    out = apply_to_subject({"image": image, "label": label}, t,
                           {"image": Interpolation.NEAREST, "label": Interpolation.NEAREST})
    np.testing.assert_array_equal(out["image"].data, out["label"].data.astype(np.float64))
    np.testing.assert_array_equal(out["image"].affine, out["label"].affine)


def test_invalid_specs():
    with pytest.raises(PreconditionViolation):
        AugmentSpec(rotation_range_deg=(5, -5))
    with pytest.raises(PreconditionViolation):
        AugmentSpec(scale_range_pct=(-100, 0))
    with pytest.raises(PreconditionViolation):
        AugmentSpec(flip_axes=("w",))
