"""Intensity normalization: mean/variance whitening and percentile-landmark
histogram standardization trained over a set of volumes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateHistogram, EmptyMask, PreconditionViolation, ShapeMismatch
from .volume import Volume

logger = logging.getLogger(__name__)

DEFAULT_PERCENTILES = (1.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 99.0)
STANDARD_RANGE = (0.0, 100.0)
TIE_EPS = 1e-6
DEGENERATE_STD = 1e-8


def _float_dtype(v: Volume):
    return np.float64 if v.dtype == np.float64 else np.float32


def _spatial_mask(v: Volume, mask):
    if mask is None:
        return np.ones(v.shape, dtype=bool)
    m = mask.data if isinstance(mask, Volume) else np.asarray(mask)
    if m.ndim == 4:
        m = m[..., 0]
    if m.shape != v.shape:
        raise ShapeMismatch(f"mask shape {m.shape} != volume shape {v.shape}")
    m = m.astype(bool)
    if not m.any():
        raise EmptyMask("normalization mask selects no voxels")
    return m


def foreground_mask(v: Volume) -> np.ndarray:
    """Voxels brighter than the volume minimum (first channel)."""
    first = v.data[..., 0]
    return first > first.min()


def meanvar_normalize(v: Volume, mask=None) -> Volume:
    """Whiten each channel to zero mean, unit sample std over ``mask``.

    The same shift and scale are applied to voxels outside the mask.  A
    (near-)constant channel maps to zeros and logs a warning.
    """
    m = _spatial_mask(v, mask)
    out = np.empty(v.data.shape, dtype=np.float64)
    for c in range(v.n_channels):
        channel = v.data[..., c].astype(np.float64)
        values = channel[m]
        mu = values.mean()
        sigma = values.std(ddof=1) if values.size > 1 else 0.0
        if not sigma >= DEGENERATE_STD:
            logger.warning("meanvar_normalize: degenerate input (std %.3g over %d voxels), "
                           "output set to zero", sigma, values.size)
            out[..., c] = 0.0
        else:
            out[..., c] = (channel - mu) / sigma
    return v.with_data(out.astype(_float_dtype(v)))


def percentiles_of(values, percentiles) -> np.ndarray:
    """Percentiles by linear interpolation between order statistics."""
    return np.percentile(np.asarray(values, dtype=np.float64), percentiles, method="linear")


def _check_percentiles(percentiles):
    p = np.asarray(percentiles, dtype=np.float64)
    if p.ndim != 1 or p.size < 2:
        raise PreconditionViolation("need at least two landmark percentiles")
    if np.any(p <= 0) or np.any(p >= 100) or np.any(np.diff(p) <= 0):
        raise PreconditionViolation(f"percentiles must be strictly ascending in (0, 100): {p.tolist()}")
    return p


@dataclass(frozen=True)
class HistogramModel:
    source_name: str
    landmark_percentiles: tuple
    standard_scale: tuple

    def __post_init__(self):
        p = _check_percentiles(self.landmark_percentiles)
        s = np.asarray(self.standard_scale, dtype=np.float64)
        if s.shape != p.shape:
            raise PreconditionViolation("standard_scale and landmark_percentiles differ in length")
        if np.any(np.diff(s) <= 0):
            raise PreconditionViolation("standard_scale must be strictly increasing")
        object.__setattr__(self, "landmark_percentiles", tuple(float(x) for x in p))
        object.__setattr__(self, "standard_scale", tuple(float(x) for x in s))


def _landmarks(v: Volume, percentiles, mask, name):
    m = _spatial_mask(v, mask)
    values = v.data[..., 0][m]
    if np.unique(values).size < 2:
        raise DegenerateHistogram(name)
    return percentiles_of(values, percentiles)


def _make_increasing(scale):
    scale = np.array(scale, dtype=np.float64)
    for i in range(1, scale.size):
        if scale[i] <= scale[i - 1]:
            scale[i] = scale[i - 1] + TIE_EPS
    return scale


def train_histogram_model(volumes, percentiles=DEFAULT_PERCENTILES, source_name="image",
                          masks=None, names=None) -> HistogramModel:
    """Average the volumes' landmarks after mapping each onto [0, 100].

    Each volume's lowest and highest landmark are sent to 0 and 100; the
    standard scale is the per-landmark mean of the mapped values.
    """
    p = _check_percentiles(percentiles)
    volumes = list(volumes)
    if not volumes:
        raise PreconditionViolation("histogram training needs at least one volume")
    masks = list(masks) if masks is not None else [None] * len(volumes)
    names = list(names) if names is not None else [f"volume {i}" for i in range(len(volumes))]

    lo, hi = STANDARD_RANGE
    mapped = []
    for v, m, name in zip(volumes, masks, names):
        lm = _landmarks(v, p, m, name)
        span = lm[-1] - lm[0]
        if not span > 0:
            raise DegenerateHistogram(name, "lowest and highest landmark coincide")
        mapped.append(lo + (lm - lm[0]) / span * (hi - lo))
    scale = _make_increasing(np.mean(mapped, axis=0))
    return HistogramModel(source_name, tuple(p), tuple(scale))


def piecewise_linear(x, xp, fp) -> np.ndarray:
    """Monotone piecewise-linear map through (xp, fp), extended by the end segments.

    ``xp`` and ``fp`` must be strictly increasing.
    """
    x = np.asarray(x, dtype=np.float64)
    xp = np.asarray(xp, dtype=np.float64)
    fp = np.asarray(fp, dtype=np.float64)
    k = xp.size
    seg = np.clip(np.searchsorted(xp, x, side="right") - 1, 0, k - 2)
    slope = np.diff(fp) / np.diff(xp)
    y = fp[seg] + (x - xp[seg]) * slope[seg]
    # clamp interior segments to their endpoints so rounding cannot break monotonicity
    upper = np.where(seg < k - 2, fp[seg + 1], np.inf)
    lower = np.where(seg > 0, fp[seg], -np.inf)
    return np.clip(y, lower, upper)


def _collapse_ties(xp, fp):
    xs, inverse = np.unique(xp, return_inverse=True)
    ys = np.array([fp[inverse == i].mean() for i in range(xs.size)])
    return xs, ys


def apply_histogram_model(v: Volume, model: HistogramModel, mask=None) -> Volume:
    """Map ``v`` onto the model's standard scale through its own landmarks.

    Landmarks are measured over ``mask`` (all voxels when omitted) on the
    first channel and the map is applied to every voxel and channel.
    """
    lm = _landmarks(v, model.landmark_percentiles, mask, model.source_name)
    xs, ys = _collapse_ties(lm, np.asarray(model.standard_scale))
    if xs.size < 2:
        raise DegenerateHistogram(model.source_name, "all landmarks coincide")
    out = piecewise_linear(v.data, xs, ys)
    return v.with_data(out.astype(_float_dtype(v)))


def save_histogram_models(models, path) -> Path:
    """Write one line per source: ``name p:value p:value ...``."""
    path = Path(path)
    lines = ["# voxelpipe histogram standardization model v1"]
    for model in models:
        pairs = " ".join(f"{p!r}:{s!r}" for p, s in zip(model.landmark_percentiles, model.standard_scale))
        lines.append(f"{model.source_name} {pairs}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_histogram_models(path) -> dict:
    models = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, *pairs = line.split()
        try:
            parsed = [tuple(float(x) for x in pair.split(":")) for pair in pairs]
            percentiles, scale = zip(*parsed)
        except ValueError as exc:
            raise PreconditionViolation(f"{path}:{line_no}: malformed landmark list") from exc
        models[name] = HistogramModel(name, percentiles, scale)
    return models
