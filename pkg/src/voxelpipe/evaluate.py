"""Segmentation and regression metrics and the per-subject metric report.

Degenerate cases (empty masks, zero variance, absent labels) produce NaN
with a machine-readable reason instead of raising, so a batch report never
stops half way through a dataset.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import EmptyMask, PreconditionViolation, ShapeMismatch
from .nifti import load_volume
from .volume import Volume

logger = logging.getLogger(__name__)

OVERLAP_METRICS = ("dice", "jaccard", "sensitivity", "specificity", "accuracy")
DISTANCE_METRICS = ("mean_abs_distance", "hausdorff", "hausdorff95")
SHAPE_METRICS = ("volume_mm3", "surface_volume_ratio", "compactness", "n_voxels")
REGION_METRICS = ("detection_rate", "region_sensitivity", "region_specificity", "region_accuracy")
REGRESSION_METRICS = ("mae", "me", "rmse")
INTENSITY_METRICS = ("mean", "q25", "median", "q75", "skewness")
SEGMENTATION_METRICS = (OVERLAP_METRICS + DISTANCE_METRICS + SHAPE_METRICS + REGION_METRICS
                        + ("relative_volume_difference",))
ALL_METRICS = SEGMENTATION_METRICS + REGRESSION_METRICS + INTENSITY_METRICS

# Table-style summary columns: one row per label, medians over subjects
SUMMARY_COLUMNS = ("dice", "relative_volume_difference", "mean_abs_distance", "hausdorff95")

REPORT_HEADER = ("subject_id", "label", "metric", "value", "reason")


class Metrics(dict):
    """Metric name -> float, with ``reasons`` explaining each NaN."""

    def __init__(self, values=(), reasons=None):
        super().__init__(values)
        self.reasons = dict(reasons or {})

    def set_nan(self, names, reason):
        for name in names:
            self[name] = math.nan
            self.reasons[name] = reason
        return self


@dataclass(frozen=True)
class BinaryMask:
    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 4 and data.shape[3] == 1:
            data = data[..., 0]
        object.__setattr__(self, "data", data.astype(bool))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @classmethod
    def from_volume(cls, v: Volume, label=None):
        data = v.data[..., 0]
        return cls(data != 0 if label is None else data == label, tuple(v.spacing))


def _as_mask(m, spacing=None) -> BinaryMask:
    if isinstance(m, BinaryMask):
        return m if spacing is None else BinaryMask(m.data, spacing)
    if isinstance(m, Volume):
        return BinaryMask.from_volume(m)
    return BinaryMask(np.asarray(m), spacing or (1.0, 1.0, 1.0))


def _pair(seg, ref, spacing=None):
    s, r = _as_mask(seg, spacing), _as_mask(ref, spacing)
    if s.data.shape != r.data.shape:
        raise ShapeMismatch(f"mask shapes differ: {s.data.shape} vs {r.data.shape}")
    return s, r


def confusion_counts(seg, ref) -> tuple:
    s, r = _pair(seg, ref)
    tp = int(np.count_nonzero(s.data & r.data))
    fp = int(np.count_nonzero(s.data & ~r.data))
    fn = int(np.count_nonzero(~s.data & r.data))
    tn = int(s.data.size - tp - fp - fn)
    return tp, fp, fn, tn


def _ratio(num, den):
    return num / den if den else math.nan


def overlap_metrics(seg, ref) -> Metrics:
    tp, fp, fn, tn = confusion_counts(seg, ref)
    out = Metrics()
    if tp + fp + fn == 0:
        out.set_nan(("dice", "jaccard"), "both_empty")
    else:
        out["dice"] = 2 * tp / (2 * tp + fp + fn)
        out["jaccard"] = tp / (tp + fp + fn)
    out["sensitivity"] = _ratio(tp, tp + fn)
    if tp + fn == 0:
        out.reasons["sensitivity"] = "reference_empty"
    out["specificity"] = _ratio(tn, tn + fp)
    if tn + fp == 0:
        out.reasons["specificity"] = "reference_full"
    out["accuracy"] = (tp + tn) / (tp + fp + fn + tn)
    return out


def border_voxels(mask) -> np.ndarray:
    """Mask voxels with a face neighbour outside the mask or the volume."""
    m = _as_mask(mask).data
    structure = ndimage.generate_binary_structure(3, 1)
    return m & ~ndimage.binary_erosion(m, structure=structure, border_value=0)


def directed_distances(from_mask, to_mask, spacing) -> np.ndarray:
    """For each border voxel of ``from_mask``, mm distance to the nearest border voxel of ``to_mask``."""
    a = border_voxels(from_mask)
    b = border_voxels(to_mask)
    field = ndimage.distance_transform_edt(~b, sampling=spacing)
    return field[a]


def surface_distances(seg, ref, spacing=None) -> Metrics:
    """Boundary distances over the union of both directed distance sets."""
    s, r = _pair(seg, ref, spacing)
    out = Metrics()
    if not s.data.any() or not r.data.any():
        return out.set_nan(DISTANCE_METRICS, "empty_mask")
    d = np.concatenate([directed_distances(s.data, r.data, s.spacing),
                        directed_distances(r.data, s.data, s.spacing)])
    out["mean_abs_distance"] = float(d.mean())
    out["hausdorff"] = float(d.max())
    out["hausdorff95"] = float(np.percentile(d, 95, method="linear"))
    return out


def shape_metrics(mask, spacing=None) -> Metrics:
    m = _as_mask(mask, spacing)
    n = int(np.count_nonzero(m.data))
    out = Metrics()
    if n == 0:
        logger.warning("shape_metrics: empty mask, reporting zeros")
        return Metrics({name: 0.0 for name in SHAPE_METRICS}, {name: "empty_mask" for name in SHAPE_METRICS})
    surface = int(np.count_nonzero(border_voxels(m.data)))
    out["n_voxels"] = float(n)
    out["volume_mm3"] = n * float(np.prod(m.spacing))
    out["surface_volume_ratio"] = surface / n
    out["compactness"] = surface ** 1.5 / n
    return out


def _structure(connectivity):
    if connectivity == 26:
        return ndimage.generate_binary_structure(3, 3)
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    raise PreconditionViolation(f"connectivity must be 6 or 26, got {connectivity}")


def _matched(components, n, other, threshold):
    """Which of the ``n`` components overlap ``other`` by at least ``threshold`` of their size."""
    if n == 0:
        return np.zeros(0, dtype=bool), np.zeros(0)
    index = np.arange(1, n + 1)
    sizes = ndimage.sum_labels(np.ones_like(components), components, index)
    hits = ndimage.sum_labels(other, components, index)
    frac = hits / sizes
    return (hits > 0) & (frac >= threshold), frac


def region_metrics(seg, ref, overlap_threshold=0.0, connectivity=26) -> Metrics:
    """Component-wise detection statistics.

    A reference component is detected when it overlaps the segmentation by
    at least ``overlap_threshold`` of its voxels (and at least one voxel).
    A segmentation component is a false positive unless it overlaps the
    reference by that fraction of its own voxels.

    * detection_rate: detected / reference components
    * region_sensitivity: mean voxel sensitivity over reference components
    * region_specificity: 1 - false-positive / segmentation components
    * region_accuracy: correctly matched components of either mask / all components
    """
    s, r = _pair(seg, ref)
    structure = _structure(connectivity)
    ref_cc, n_ref = ndimage.label(r.data, structure=structure)
    seg_cc, n_seg = ndimage.label(s.data, structure=structure)
    ref_hit, ref_frac = _matched(ref_cc, n_ref, s.data, overlap_threshold)
    seg_hit, _ = _matched(seg_cc, n_seg, r.data, overlap_threshold)

    out = Metrics()
    if n_ref:
        out["detection_rate"] = float(ref_hit.sum()) / n_ref
        out["region_sensitivity"] = float(ref_frac.mean())
    else:
        out.set_nan(("detection_rate", "region_sensitivity"), "no_reference_regions")
    if n_seg:
        out["region_specificity"] = 1.0 - float((~seg_hit).sum()) / n_seg
    else:
        out.set_nan(("region_specificity",), "no_segmentation_regions")
    if n_ref + n_seg:
        out["region_accuracy"] = float(ref_hit.sum() + seg_hit.sum()) / (n_ref + n_seg)
    else:
        out.set_nan(("region_accuracy",), "both_empty")
    out.n_reference_regions = n_ref
    out.n_segmentation_regions = n_seg
    out.n_false_positive_regions = int((~seg_hit).sum())
    return out


def _values(v):
    return np.asarray(v.data if isinstance(v, Volume) else v, dtype=np.float64)


def _select(values, mask, shape):
    if mask is None:
        return values.ravel()
    m = _as_mask(mask).data
    if m.shape != shape[:3]:
        raise ShapeMismatch(f"mask shape {m.shape} != data shape {shape[:3]}")
    if not m.any():
        raise EmptyMask("metric mask selects no voxels")
    return values[m].ravel()


def regression_metrics(pred, ref, mask=None) -> Metrics:
    p, r = _values(pred), _values(ref)
    if p.shape != r.shape:
        raise ShapeMismatch(f"prediction shape {p.shape} != reference shape {r.shape}")
    diff = _select(p - r, mask, p.shape)
    return Metrics({"mae": float(np.mean(np.abs(diff))), "me": float(np.mean(diff)),
                    "rmse": float(np.sqrt(np.mean(diff ** 2)))})


def intensity_stats(v, mask) -> Metrics:
    values = _values(v)
    if values.ndim == 4:
        values = values[..., 0]
    x = _select(values, mask, values.shape)
    q25, median, q75 = np.percentile(x, [25, 50, 75], method="linear")
    out = Metrics({"mean": float(x.mean()), "q25": float(q25), "median": float(median), "q75": float(q75)})
    dev = x - x.mean()
    m2 = np.mean(dev ** 2)
    if m2 == 0:
        out.set_nan(("skewness",), "zero_variance")
    else:
        out["skewness"] = float(np.mean(dev ** 3) / m2 ** 1.5)
    return out


# -- reports ----------------------------------------------------------------

@dataclass(frozen=True)
class MetricRow:
    subject_id: str
    label: str
    metric: str
    value: float
    reason: str = ""


def _fmt(value):
    return "nan" if math.isnan(value) else repr(float(value))


def segmentation_metrics(seg, ref, spacing, metrics=SEGMENTATION_METRICS, overlap_threshold=0.0,
                         connectivity=26) -> Metrics:
    """Every requested segmentation metric for one binary pair."""
    wanted = set(metrics)
    unknown = wanted - set(SEGMENTATION_METRICS)
    if unknown:
        raise PreconditionViolation(f"unknown segmentation metrics {sorted(unknown)}")
    s, r = _pair(seg, ref, spacing)
    out = Metrics()
    groups = [
        (OVERLAP_METRICS, lambda: overlap_metrics(s, r)),
        (DISTANCE_METRICS, lambda: surface_distances(s, r)),
        (SHAPE_METRICS, lambda: shape_metrics(s)),
        (REGION_METRICS, lambda: region_metrics(s, r, overlap_threshold, connectivity)),
    ]
    for names, compute in groups:
        if wanted & set(names):
            part = compute()
            for name in names:
                if name in wanted:
                    out[name] = part[name]
                    if name in part.reasons:
                        out.reasons[name] = part.reasons[name]
    if "relative_volume_difference" in wanted:
        n_seg, n_ref = int(s.data.sum()), int(r.data.sum())
        if n_ref == 0:
            out.set_nan(("relative_volume_difference",), "reference_empty")
        else:
            out["relative_volume_difference"] = (n_seg - n_ref) / n_ref
    return out


def evaluate_subject(seg_path, ref_path, labels=None, metric_set=SEGMENTATION_METRICS, subject_id=None,
                     units="mm", image_path=None, overlap_threshold=0.0, connectivity=26) -> list:
    """Per-label metric rows for one subject.

    ``labels`` defaults to every non-zero label present in either volume.
    With ``image_path`` the intensity statistics inside each segmented label
    are added.  ``units="voxel"`` reports distances with unit spacing.
    """
    seg = load_volume(seg_path) if not isinstance(seg_path, Volume) else seg_path
    ref = load_volume(ref_path) if not isinstance(ref_path, Volume) else ref_path
    if seg.shape != ref.shape:
        raise ShapeMismatch(f"segmentation {seg.shape} and reference {ref.shape} differ in shape")
    if subject_id is None:
        subject_id = Path(str(seg_path)).name.split(".")[0]
    spacing = (1.0, 1.0, 1.0) if units == "voxel" else tuple(ref.spacing)
    image = None
    if image_path is not None:
        image = load_volume(image_path) if not isinstance(image_path, Volume) else image_path

    seg_data, ref_data = seg.data[..., 0], ref.data[..., 0]
    if labels is None or len(labels) == 0:
        present = np.union1d(np.unique(seg_data), np.unique(ref_data))
        labels = [x for x in present.tolist() if x != 0]
    metric_set = tuple(metric_set)
    seg_names = [m for m in metric_set if m in SEGMENTATION_METRICS]
    int_names = [m for m in metric_set if m in INTENSITY_METRICS]

    rows = []
    for label in sorted(labels):
        s, r = seg_data == label, ref_data == label
        if not s.any() and not r.any():
            values = Metrics().set_nan(seg_names + int_names, "label_absent")
        else:
            values = segmentation_metrics(s, r, spacing, seg_names, overlap_threshold, connectivity)
            if int_names and image is not None:
                if s.any():
                    part = intensity_stats(image, s)
                    values.update({k: part[k] for k in int_names})
                    values.reasons.update({k: v for k, v in part.reasons.items() if k in int_names})
                else:
                    values.set_nan(int_names, "empty_mask")
        label_str = _label_str(label)
        for name in sorted(values):
            rows.append(MetricRow(subject_id, label_str, name, float(values[name]),
                                  values.reasons.get(name, "")))
    return rows


def evaluate_regression_subject(pred_path, ref_path, mask_path=None, subject_id=None) -> list:
    pred = load_volume(pred_path) if not isinstance(pred_path, Volume) else pred_path
    ref = load_volume(ref_path) if not isinstance(ref_path, Volume) else ref_path
    mask = None
    if mask_path is not None:
        mask = load_volume(mask_path) if not isinstance(mask_path, Volume) else mask_path
    if subject_id is None:
        subject_id = Path(str(pred_path)).name.split(".")[0]
    values = regression_metrics(pred, ref, mask)
    return [MetricRow(subject_id, "all", name, values[name]) for name in sorted(values)]


def _label_str(label):
    if isinstance(label, float) and label.is_integer():
        label = int(label)
    return str(label)


def report_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_HEADER)
    for row in rows:
        writer.writerow([row.subject_id, row.label, row.metric, _fmt(row.value), row.reason])
    return buf.getvalue()


def write_report(rows, path) -> Path:
    path = Path(path)
    path.write_text(report_csv(rows), encoding="utf-8", newline="")
    return path


def read_report(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_HEADER:
            raise PreconditionViolation(f"{path}: unexpected report header {reader.fieldnames}")
        return [MetricRow(r["subject_id"], r["label"], r["metric"], float(r["value"]), r["reason"])
                for r in reader]


def median_table(rows, columns=SUMMARY_COLUMNS) -> list:
    """Per-label medians over subjects (NaNs ignored) for the summary columns.

    Returns ``[(label, {metric: median}), ...]`` sorted by label.
    """
    by_label = {}
    for row in rows:
        if row.metric in columns:
            by_label.setdefault(row.label, {}).setdefault(row.metric, []).append(row.value)
    table = []
    for label in sorted(by_label, key=_label_sort_key):
        medians = {}
        for metric in columns:
            vals = np.array(by_label[label].get(metric, []), dtype=np.float64)
            vals = vals[~np.isnan(vals)]
            medians[metric] = float(np.median(vals)) if vals.size else math.nan
        table.append((label, medians))
    return table


def _label_sort_key(label):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def summary_csv(table, columns=SUMMARY_COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("label",) + tuple(columns))
    for label, medians in table:
        writer.writerow([label] + [_fmt(medians[c]) for c in columns])
    return buf.getvalue()
