import logging
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from voxelpipe.errors import EmptyMask, ShapeMismatch
from voxelpipe.evaluate import (REPORT_HEADER, SUMMARY_COLUMNS, BinaryMask, confusion_counts,
                                evaluate_regression_subject, evaluate_subject, intensity_stats,
                                median_table, overlap_metrics, read_report, region_metrics,
                                regression_metrics, report_csv, shape_metrics, summary_csv,
                                surface_distances, write_report)
from voxelpipe.nifti import write_nifti
from voxelpipe.volume import Volume


def mask(shape, *points):
    m = np.zeros(shape, bool)
    for p in points:
        m[p] = True
    return m


def random_pair(r, max_side=8):
    shape = tuple(int(x) for x in r.integers(1, max_side + 1, size=3))
    density = r.uniform(0.05, 0.6)
    seg = r.random(shape) < density
    ref = r.random(shape) < density
    return seg, ref


# -- overlap ---------------------------------------------------------------

def test_identical_masks():
    m = mask((4, 4, 4), (1, 1, 1), (1, 2, 1))
    o = overlap_metrics(m, m)
    assert o["dice"] == o["jaccard"] == o["sensitivity"] == 1.0


def test_disjoint_masks():
    o = overlap_metrics(mask((4, 4, 4), (0, 0, 0)), mask((4, 4, 4), (3, 3, 3)))
    assert o["dice"] == 0 and o["jaccard"] == 0


def test_half_overlap_on_8_cube():
    seg = mask((8, 8, 8), (0, 0, 0), (0, 0, 1), (0, 0, 2), (0, 0, 3))
    ref = mask((8, 8, 8), (0, 0, 2), (0, 0, 3), (5, 5, 5), (6, 6, 6))
    o = overlap_metrics(seg, ref)
    assert o["dice"] == 0.5
    assert o["jaccard"] == pytest.approx(1 / 3, abs=1e-15)
    assert confusion_counts(seg, ref) == oracles.confusion(seg, ref) == (2, 2, 2, 506)
    assert o["specificity"] == 506 / 508 and o["accuracy"] == 508 / 512


def test_both_empty_is_nan_with_reason():
    z = np.zeros((3, 3, 3), bool)
    o = overlap_metrics(z, z)
    assert math.isnan(o["dice"]) and o.reasons["dice"] == "both_empty"
    assert math.isnan(o["sensitivity"]) and o["specificity"] == 1.0


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        overlap_metrics(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_overlap_identities(seed):
    seg, ref = random_pair(np.random.default_rng(seed))
    o, swapped = overlap_metrics(seg, ref), overlap_metrics(ref, seg)
    tp, fp, fn, tn = oracles.confusion(seg, ref)
    assert confusion_counts(seg, ref) == (tp, fp, fn, tn)
    if tp + fp + fn:
        j = Fraction(tp, tp + fp + fn)
        assert Fraction(2 * tp, 2 * tp + fp + fn) == 2 * j / (1 + j)
        assert o["dice"] == pytest.approx(2 * o["jaccard"] / (1 + o["jaccard"]), rel=1e-15)
        assert o["dice"] == swapped["dice"] and o["jaccard"] == swapped["jaccard"]
    if tp + fn and tp + fp:
        assert o["sensitivity"] == tp / (tp + fn)
        assert swapped["sensitivity"] == tp / (tp + fp)


# -- distances -------------------------------------------------------------

def test_identical_distance_zero():
    m = mask((5, 5, 5), (1, 1, 1), (2, 2, 2))
    d = surface_distances(m, m)
    assert d["mean_abs_distance"] == d["hausdorff"] == d["hausdorff95"] == 0


def test_single_voxels_3_4_5():
    d = surface_distances(mask((5, 5, 1), (0, 0, 0)), mask((5, 5, 1), (3, 4, 0)))
    assert d["mean_abs_distance"] == d["hausdorff"] == d["hausdorff95"] == 5.0


def test_anisotropic_spacing():
    seg, ref = mask((1, 1, 2), (0, 0, 0)), mask((1, 1, 2), (0, 0, 1))
    d = surface_distances(BinaryMask(seg, (1, 1, 2)), BinaryMask(ref, (1, 1, 2)))
    assert d["hausdorff"] == 2.0


def test_empty_mask_distance_nan():
    d = surface_distances(np.zeros((3, 3, 3)), mask((3, 3, 3), (1, 1, 1)))
    assert all(math.isnan(d[k]) for k in d)
    assert d.reasons["hausdorff"] == "empty_mask"


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_distances_match_brute_force(seed):
    r = np.random.default_rng(seed)
    seg, ref = random_pair(r)
    if not seg.any() or not ref.any():
        return
    spacing = tuple(r.uniform(0.3, 3.0, size=3))
    got = surface_distances(BinaryMask(seg, spacing), BinaryMask(ref, spacing))
    want = oracles.surface(seg, ref, spacing)
    for k, v in want.items():
        assert abs(got[k] - v) <= 1e-9
    back = surface_distances(BinaryMask(ref, spacing), BinaryMask(seg, spacing))
    assert all(abs(back[k] - got[k]) <= 1e-12 for k in got)
    assert got["hausdorff95"] <= got["hausdorff"] and got["mean_abs_distance"] <= got["hausdorff"]
    doubled = surface_distances(BinaryMask(seg, tuple(2 * s for s in spacing)),
                                BinaryMask(ref, tuple(2 * s for s in spacing)))
    for k in got:
        assert doubled[k] == pytest.approx(2 * got[k], rel=1e-12)


# -- shape -----------------------------------------------------------------

def test_volume_with_spacing():
    m = np.zeros((4, 4, 4), bool)
    m[:2, :2, :2] = True
    assert shape_metrics(m, (1, 1, 2))["volume_mm3"] == 16.0


def test_single_voxel_shape():
    s = shape_metrics(mask((3, 3, 3), (1, 1, 1)))
    assert (s["n_voxels"], s["surface_volume_ratio"], s["compactness"]) == (1, 1, 1)


def test_solid_cube_surface():
    m = np.zeros((5, 5, 5), bool)
    m[1:4, 1:4, 1:4] = True
    s = shape_metrics(m)
    assert len(oracles.border(m)) == 26
    assert s["surface_volume_ratio"] == 26 / 27
    assert s["compactness"] == 26 ** 1.5 / 27


def test_cube_touching_volume_edge_counts_as_border():
    assert shape_metrics(np.ones((3, 3, 3), bool))["surface_volume_ratio"] == 26 / 27


def test_empty_shape_zeros_with_warning(caplog):
    with caplog.at_level(logging.WARNING, logger="voxelpipe.evaluate"):
        s = shape_metrics(np.zeros((2, 2, 2), bool))
    assert all(v == 0 for v in s.values())
    assert caplog.records


# -- regions ---------------------------------------------------------------

def two_blobs():
    ref = np.zeros((6, 6, 6), bool)
    ref[0:2, 0:2, 0:2] = True
    ref[4:6, 4:6, 4:6] = True
    return ref


def test_one_of_two_regions_detected():
    ref = two_blobs()
    seg = np.zeros_like(ref)
    seg[0, 0, 0] = True
    assert len(oracles.components(ref)) == 2
    out = region_metrics(seg, ref)
    assert out["detection_rate"] == 0.5
    assert out == pytest.approx(oracles.region(seg, ref), nan_ok=True)


def test_identical_regions():
    ref = two_blobs()
    out = region_metrics(ref, ref)
    assert out["detection_rate"] == 1.0 and out.n_false_positive_regions == 0
    assert out["region_specificity"] == 1.0


def test_empty_seg_detects_nothing():
    out = region_metrics(np.zeros((6, 6, 6), bool), two_blobs())
    assert out["detection_rate"] == 0.0
    assert out.reasons["region_specificity"] == "no_segmentation_regions"


def test_connectivity_changes_components():
    m = mask((3, 3, 3), (0, 0, 0), (1, 1, 1))
    assert region_metrics(m, m, connectivity=26).n_reference_regions == 1
    assert region_metrics(m, m, connectivity=6).n_reference_regions == 2


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([6, 26]), st.sampled_from([0.0, 0.3, 0.7]))
def test_regions_match_bfs_oracle(seed, connectivity, threshold):
    seg, ref = random_pair(np.random.default_rng(seed))
    got = region_metrics(seg, ref, threshold, connectivity)
    want = oracles.region(seg, ref, threshold, connectivity)
    assert dict(got) == pytest.approx(want, nan_ok=True, abs=1e-12)


# -- regression and intensity ----------------------------------------------

def test_regression_identity_and_offset(rng):
    ref = rng.normal(size=(4, 4, 4))
    assert regression_metrics(ref, ref) == {"mae": 0.0, "me": 0.0, "rmse": 0.0}
    out = regression_metrics(ref - 2.5, ref)
    assert out == pytest.approx({"mae": 2.5, "me": -2.5, "rmse": 2.5}, abs=1e-12)


def test_regression_scalar_loop_oracle(rng):
    p, r = rng.normal(size=(4, 4, 4)), rng.normal(size=(4, 4, 4))
    diffs = [float(a - b) for a, b in zip(p.ravel(), r.ravel())]
    want = {"mae": math.fsum(abs(d) for d in diffs) / 64, "me": math.fsum(diffs) / 64,
            "rmse": math.sqrt(math.fsum(d * d for d in diffs) / 64)}
    assert regression_metrics(p, r) == pytest.approx(want, abs=1e-12)


def test_regression_empty_mask():
    with pytest.raises(EmptyMask):
        regression_metrics(np.ones((2, 2, 2)), np.ones((2, 2, 2)), np.zeros((2, 2, 2), bool))


def test_intensity_quartiles():
    v = np.array([1.0, 2.0, 3.0, 4.0]).reshape(4, 1, 1)
    out = intensity_stats(v, np.ones((4, 1, 1), bool))
    assert (out["mean"], out["median"], out["q25"], out["q75"]) == (2.5, 2.5, 1.75, 3.25)
    assert out["skewness"] == 0.0


def test_intensity_symmetric_and_constant():
    v = np.array([-1.0, 0.0, 1.0]).reshape(3, 1, 1)
    assert intensity_stats(v, np.ones((3, 1, 1)))["skewness"] == 0.0
    c = intensity_stats(np.full((3, 1, 1), 4.0), np.ones((3, 1, 1)))
    assert math.isnan(c["skewness"]) and c.reasons["skewness"] == "zero_variance"


def test_skewness_against_moment_oracle(rng):
    x = rng.exponential(size=50)
    mu = math.fsum(x) / 50
    m2 = math.fsum((a - mu) ** 2 for a in x) / 50
    m3 = math.fsum((a - mu) ** 3 for a in x) / 50
    got = intensity_stats(x.reshape(50, 1, 1), np.ones((50, 1, 1)))["skewness"]
    assert got == pytest.approx(m3 / m2 ** 1.5, abs=1e-12)


# -- per-subject reports ---------------------------------------------------

def label_pair(rng):
    seg = rng.integers(0, 3, size=(8, 8, 8)).astype(np.int16)
    ref = seg.copy()
    flip = rng.random(seg.shape) < 0.15
    ref[flip] = rng.integers(0, 3, size=int(flip.sum()))
    return seg, ref


def test_identical_label_maps_dice_one(rng):
    seg, _ = label_pair(rng)
    rows = evaluate_subject(Volume(seg, np.eye(4)), Volume(seg, np.eye(4)), subject_id="s")
    dice = {r.label: r.value for r in rows if r.metric == "dice"}
    assert dice == {"1": 1.0, "2": 1.0}


def test_report_cross_checked_against_oracles(tmp_path, rng):
    seg, ref = label_pair(rng)
    spacing = np.diag([1.0, 1.5, 2.0, 1.0])
    sp = write_nifti(Volume(seg, spacing), tmp_path / "case1_seg.nii.gz")
    rp = write_nifti(Volume(ref, spacing), tmp_path / "case1_ref.nii.gz")
    rows = evaluate_subject(sp, rp)
    assert {r.subject_id for r in rows} == {"case1_seg"}
    table = {(r.label, r.metric): r.value for r in rows}
    for label in (1, 2):
        s, r = seg == label, ref == label
        tp, fp, fn, tn = oracles.confusion(s, r)
        want = {"dice": 2 * tp / (2 * tp + fp + fn), "jaccard": tp / (tp + fp + fn),
                "sensitivity": tp / (tp + fn), "specificity": tn / (tn + fp),
                "accuracy": (tp + tn) / 512,
                "relative_volume_difference": (s.sum() - r.sum()) / r.sum(),
                "n_voxels": float(s.sum()), "volume_mm3": 3.0 * s.sum()}
        want.update(oracles.surface(s, r, (1.0, 1.5, 2.0)))
        want.update(oracles.region(s, r))
        nb = len(oracles.border(s))
        want["surface_volume_ratio"] = nb / s.sum()
        want["compactness"] = nb ** 1.5 / s.sum()
        for metric, value in want.items():
            assert table[(str(label), metric)] == pytest.approx(value, abs=1e-9), metric
    assert [(r.label, r.metric) for r in rows] == sorted((r.label, r.metric) for r in rows)


def test_absent_label_rows_are_nan(rng):
    seg, ref = label_pair(rng)
    rows = evaluate_subject(Volume(seg, np.eye(4)), Volume(ref, np.eye(4)), labels=[7],
                            metric_set=("dice", "hausdorff95"), subject_id="s")
    assert [(r.metric, r.reason) for r in rows] == [("dice", "label_absent"), ("hausdorff95", "label_absent")]
    assert all(math.isnan(r.value) for r in rows)


def test_voxel_units(rng):
    a = mask((4, 4, 4), (0, 0, 0))
    b = mask((4, 4, 4), (0, 0, 3))
    aff = np.diag([1.0, 1.0, 2.0, 1.0])
    args = (Volume(a.astype(np.uint8), aff), Volume(b.astype(np.uint8), aff))
    mm = evaluate_subject(*args, labels=[1], metric_set=("hausdorff",), subject_id="s")
    vox = evaluate_subject(*args, labels=[1], metric_set=("hausdorff",), subject_id="s", units="voxel")
    assert (mm[0].value, vox[0].value) == (6.0, 3.0)


def test_csv_header_round_trip_and_summary(tmp_path, rng):
    seg, ref = label_pair(rng)
    rows = evaluate_subject(Volume(seg, np.eye(4)), Volume(ref, np.eye(4)), subject_id="a")
    rows += evaluate_subject(Volume(ref, np.eye(4)), Volume(seg, np.eye(4)), subject_id="b")
    path = write_report(rows, tmp_path / "report.csv")
    assert path.read_text().splitlines()[0] == ",".join(REPORT_HEADER)
    assert report_csv(read_report(path)) == path.read_text()
    table = median_table(rows)
    assert [label for label, _ in table] == ["1", "2"]
    summary = summary_csv(table).splitlines()
    # columns named after the organ-table metrics
    assert summary[0] == "label,dice,relative_volume_difference,mean_abs_distance,hausdorff95"
    assert SUMMARY_COLUMNS == ("dice", "relative_volume_difference", "mean_abs_distance", "hausdorff95")


def test_regression_subject_rows(rng):
    p, r = rng.normal(size=(3, 3, 3)), rng.normal(size=(3, 3, 3))
    rows = evaluate_regression_subject(Volume(p, np.eye(4)), Volume(r, np.eye(4)), subject_id="x")
    assert [row.metric for row in rows] == ["mae", "me", "rmse"]
    assert {row.label for row in rows} == {"all"}
