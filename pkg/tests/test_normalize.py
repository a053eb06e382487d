import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import mean_two_pass, percentile_linear
from voxelpipe.errors import DegenerateHistogram, EmptyMask, PreconditionViolation
from voxelpipe.normalize import (DEFAULT_PERCENTILES, HistogramModel, apply_histogram_model,
                                 foreground_mask, load_histogram_models, meanvar_normalize,
                                 percentiles_of, piecewise_linear, save_histogram_models,
                                 train_histogram_model)
from voxelpipe.volume import Volume


def vol(data):
    return Volume(np.asarray(data), np.eye(4))


def test_two_point_case():
    out = meanvar_normalize(vol(np.array([0.0, 2.0]).reshape(2, 1, 1)))
    # sample std of {0, 2} is sqrt(2)
    np.testing.assert_allclose(out.data.ravel(), [-1 / np.sqrt(2), 1 / np.sqrt(2)], rtol=1e-7)


def test_constant_volume_gives_zeros_and_warning(caplog):
    with caplog.at_level(logging.WARNING, logger="voxelpipe.normalize"):
        out = meanvar_normalize(vol(np.full((3, 3, 3), 4.0, np.float32)))
    assert np.all(out.data == 0)
    assert any("degenerate" in r.getMessage() for r in caplog.records)


def test_random_volume_against_two_pass_oracle(rng):
    data = rng.normal(3, 2, size=(8, 8, 8))
    out = meanvar_normalize(vol(data))
    mu, sigma = mean_two_pass(data.ravel())
    np.testing.assert_allclose(out.data[..., 0], (data - mu) / sigma, atol=1e-9)


def test_mask_statistics_and_outside_voxels(rng):
    data = rng.uniform(0, 10, size=(6, 6, 6))
    mask = data > 3
    out = meanvar_normalize(vol(data), mask).data[..., 0]
    mu, sigma = mean_two_pass(data[mask])
    assert abs(out[mask].mean()) < 1e-9
    assert abs(out[mask].std(ddof=1) - 1) < 1e-9
    np.testing.assert_allclose(out[~mask], (data[~mask] - mu) / sigma, atol=1e-9)


def test_empty_mask():
    with pytest.raises(EmptyMask):
        meanvar_normalize(vol(np.ones((2, 2, 2))), np.zeros((2, 2, 2), bool))


def test_channels_normalized_independently(rng):
    data = np.stack([rng.normal(0, 1, (4, 4, 4)), rng.normal(50, 9, (4, 4, 4))], axis=-1)
    out = meanvar_normalize(vol(data)).data
    for c in range(2):
        assert abs(out[..., c].mean()) < 1e-9 and abs(out[..., c].std(ddof=1) - 1) < 1e-9


def test_integer_input_becomes_float32():
    out = meanvar_normalize(vol(np.arange(8, dtype=np.int16).reshape(2, 2, 2)))
    assert out.dtype == np.float32


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_meanvar_idempotent(seed):
    data = np.random.default_rng(seed).normal(0, 5, size=(5, 4, 3))
    once = meanvar_normalize(vol(data))
    twice = meanvar_normalize(once)
    np.testing.assert_allclose(twice.data, once.data, atol=1e-6)


def test_foreground_mask():
    m = foreground_mask(vol(np.array([0, 0, 1, 5], np.float32).reshape(4, 1, 1)))
    assert m.ravel().tolist() == [False, False, True, True]


def test_percentiles_match_order_statistic_oracle(rng):
    values = rng.normal(size=97)
    for p in DEFAULT_PERCENTILES:
        assert percentiles_of(values, [p])[0] == pytest.approx(percentile_linear(values, p), abs=1e-12)


def test_self_consistency_single_volume(rng):
    v = vol(rng.gamma(2.0, 30.0, size=(10, 10, 10)))
    model = train_histogram_model([v])
    out = apply_histogram_model(v, model)
    got = percentiles_of(out.data[..., 0].ravel(), model.landmark_percentiles)
    np.testing.assert_allclose(got, model.standard_scale, atol=1e-6)
    assert model.standard_scale[0] == 0 and model.standard_scale[-1] == 100


def test_affine_pair_standardizes_identically(rng):
    a = rng.gamma(2.0, 30.0, size=(8, 8, 8))
    va, vb = vol(a), vol(3 * a + 5)
    model = train_histogram_model([va, vb])
    np.testing.assert_allclose(apply_histogram_model(va, model).data,
                               apply_histogram_model(vb, model).data, atol=1e-5)


def test_percentiles_must_ascend(rng):
    v = vol(rng.normal(size=(4, 4, 4)))
    with pytest.raises(PreconditionViolation):
        train_histogram_model([v], (10, 5, 90))
    with pytest.raises(PreconditionViolation):
        train_histogram_model([v], (0, 50, 90))


def test_identity_model():
    # percentiles of an even grid over [0, 100] are the percentiles themselves
    v = vol(np.linspace(0, 100, 1001).reshape(1001, 1, 1))
    model = HistogramModel("image", DEFAULT_PERCENTILES, DEFAULT_PERCENTILES)
    np.testing.assert_allclose(apply_histogram_model(v, model).data, v.data, atol=1e-6)


def test_degenerate_training_volume():
    with pytest.raises(DegenerateHistogram):
        train_histogram_model([vol(np.full((3, 3, 3), 2.0))], names=["subj7"])


def test_mapped_landmarks_against_per_voxel_oracle(rng):
    train = [vol(rng.gamma(2.0, s, size=(6, 6, 6))) for s in (10, 20, 40)]
    model = train_histogram_model(train)
    held_out = rng.gamma(3.0, 15.0, size=(6, 6, 6))
    out = apply_histogram_model(vol(held_out), model).data[..., 0]
    xp = [percentile_linear(held_out.ravel(), p) for p in model.landmark_percentiles]
    fp = model.standard_scale
    for idx in [(0, 0, 0), (5, 5, 5), (1, 2, 3), (4, 0, 2)]:
        x = held_out[idx]
        k = max(0, min(len(xp) - 2, sum(1 for t in xp if t <= x) - 1))
        expected = fp[k] + (x - xp[k]) * (fp[k + 1] - fp[k]) / (xp[k + 1] - xp[k])
        assert out[idx] == pytest.approx(expected, abs=1e-9)


def test_piecewise_linear_extrapolates_end_segments():
    y = piecewise_linear([-1.0, 0.5, 3.0], [0.0, 1.0, 2.0], [0.0, 10.0, 30.0])
    np.testing.assert_allclose(y, [-10.0, 5.0, 50.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_histogram_preserves_rank_order(seed):
    r = np.random.default_rng(seed)
    train = [vol(r.exponential(r.uniform(1, 50), size=(5, 5, 5))) for _ in range(3)]
    model = train_histogram_model(train)
    x = r.exponential(20, size=(5, 5, 5))
    y = apply_histogram_model(vol(x), model).data[..., 0].ravel()
    order = np.argsort(x.ravel(), kind="stable")
    assert np.all(np.diff(y[order]) >= 0)


def test_tie_repair_keeps_scale_increasing():
    # heavy point mass at zero makes the low landmarks coincide
    data = np.zeros(1000)
    data[700:] = np.linspace(1, 10, 300)
    model = train_histogram_model([vol(data.reshape(1000, 1, 1))])
    assert np.all(np.diff(model.standard_scale) > 0)
    out = apply_histogram_model(vol(data.reshape(1000, 1, 1)), model).data.ravel()
    assert np.all(np.diff(out) >= 0)


def test_model_file_round_trip(tmp_path, rng):
    models = [train_histogram_model([vol(rng.normal(size=(4, 4, 4)))], source_name=n)
              for n in ("t1", "flair")]
    path = save_histogram_models(models, tmp_path / "histogram_model.txt")
    loaded = load_histogram_models(path)
    assert loaded == {m.source_name: m for m in models}
    assert path.read_text().splitlines()[1].startswith("t1 1.0:0.0 ")
