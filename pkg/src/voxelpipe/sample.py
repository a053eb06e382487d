"""Window samplers and the multi-lane sample stream.

A *window* is a fixed-size box cut from every source of a subject at the
same ``spatial_start``.  Coordinates in a :class:`WindowSample` refer to the
padded volume; ``pad_applied`` is the leading pad per axis, so the original
voxel of patch index ``i`` is ``spatial_start + i - pad_applied``.
"""
from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .augment import AugmentSpec, SampledTransform, apply_to_subject, sample_transform
from .errors import (InvalidWeightMap, PreconditionViolation, SamplerError, ShapeMismatch,
                     VoxelpipeError)
from .volume import Interpolation, Volume, pad, resample, translation

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridSpec:
    window_size: tuple
    border: tuple = (0, 0, 0)

    def __post_init__(self):
        window = _vec3(self.window_size, "window_size")
        border = _vec3(self.border, "border")
        if min(window) < 1 or min(border) < 0:
            raise PreconditionViolation(f"window must be positive and border non-negative: {window}, {border}")
        if any(w - 2 * b < 1 for w, b in zip(window, border)):
            raise PreconditionViolation(f"window {window} leaves no interior with border {border}")
        object.__setattr__(self, "window_size", window)
        object.__setattr__(self, "border", border)

    @property
    def stride(self) -> tuple:
        return tuple(w - 2 * b for w, b in zip(self.window_size, self.border))


@dataclass(frozen=True, eq=False)
class WindowSample:
    subject_id: str
    patches: dict
    spatial_start: tuple
    window_size: tuple
    pad_applied: tuple = (0, 0, 0)
    transform_applied: SampledTransform | None = None
    affine: np.ndarray = field(default_factory=lambda: np.eye(4))

    def key(self) -> tuple:
        """Hashable identity used to compare sample multisets."""
        digest = tuple((name, self.patches[name].tobytes()) for name in sorted(self.patches))
        return (self.subject_id, self.spatial_start, self.window_size, self.pad_applied, digest)


def _vec3(values, name):
    if np.isscalar(values):
        values = (values,) * 3
    values = tuple(int(v) for v in values)
    if len(values) != 3:
        raise PreconditionViolation(f"{name} must have 3 entries, got {values}")
    return values


def _common_shape(volumes) -> tuple:
    shapes = {v.shape for v in volumes.values()}
    if len(shapes) != 1:
        raise ShapeMismatch(f"sources of one subject differ in shape: {sorted(shapes)}")
    return shapes.pop()


def _first(volumes) -> Volume:
    return next(iter(volumes.values()))


def pad_to_window(volumes, window):
    """Edge-pad every source so each axis is at least ``window`` long.

    Returns ``(padded, leading_pad)``; padding is split as evenly as possible.
    """
    shape = _common_shape(volumes)
    widths = []
    for s, w in zip(shape, window):
        extra = max(0, w - s)
        widths.append((extra // 2, extra - extra // 2))
    if not any(a or b for a, b in widths):
        return dict(volumes), (0, 0, 0)
    return {n: pad(v, widths) for n, v in volumes.items()}, tuple(a for a, _ in widths)


def extract(volumes, start, window) -> dict:
    sl = tuple(slice(s, s + w) for s, w in zip(start, window)) + (slice(None),)
    return {name: np.array(v.data[sl]) for name, v in volumes.items()}


def _make_sample(subject_id, volumes, start, window, pad_applied, transform=None):
    start = tuple(int(s) for s in start)
    affine = _first(volumes).affine @ translation(start)
    return WindowSample(subject_id, extract(volumes, start, window), start, tuple(window),
                        tuple(pad_applied), transform, affine)


def _prepare(volumes, rng, augment, interps, spacing_source=None):
    """Apply augmentation (if any) once for this subject draw."""
    volumes = dict(volumes)
    _common_shape(volumes)
    if augment is None:
        return volumes, None
    ref = _first(volumes)
    t = sample_transform(augment, rng, ref.shape, ref.spacing)
    if t.is_identity:
        return volumes, t
    return apply_to_subject(volumes, t, interps or {}), t


def uniform_sample(volumes, window, count, seed=0, subject_id="", augment: AugmentSpec | None = None,
                   interps=None) -> list:
    """``count`` windows with starts drawn uniformly over all valid positions."""
    window = _vec3(window, "window")
    if count <= 0:
        raise PreconditionViolation(f"count must be positive, got {count}")
    rng = np.random.default_rng(seed)
    volumes, t = _prepare(volumes, rng, augment, interps)
    volumes, pad_applied = pad_to_window(volumes, window)
    shape = _common_shape(volumes)
    high = np.array(shape) - np.array(window) + 1
    starts = rng.integers(0, high, size=(count, 3))
    return [_make_sample(subject_id, volumes, s, window, pad_applied, t) for s in starts]


def weighted_sample(volumes, weight_source, window, count, seed=0, subject_id="",
                    augment: AugmentSpec | None = None, interps=None) -> list:
    """``count`` windows whose centre voxel is drawn proportionally to a weight map.

    ``weight_source`` is a Volume or the name of a source in ``volumes``.  The
    centre of a window is ``start + window // 2``; starts are clamped so the
    window stays inside the volume.
    """
    window = _vec3(window, "window")
    if count <= 0:
        raise PreconditionViolation(f"count must be positive, got {count}")
    volumes = dict(volumes)
    weights = volumes[weight_source] if isinstance(weight_source, str) else weight_source
    w = np.asarray(weights.data[..., 0], dtype=np.float64)
    if w.shape != _common_shape(volumes):
        raise ShapeMismatch(f"weight map shape {w.shape} differs from volume shape")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvalidWeightMap("weight map has negative or non-finite entries")
    if not w.sum() > 0:
        raise InvalidWeightMap("weight map is all zero")

    rng = np.random.default_rng(seed)
    volumes, t = _prepare(volumes, rng, augment, interps)
    if t is not None and not t.is_identity:
        w = resample(Volume(w, np.eye(4)), t.composed, w.shape, Interpolation.NEAREST, pad_value=0.0).data[..., 0]
        if not w.sum() > 0:
            raise InvalidWeightMap("augmentation moved all weight outside the volume")
    volumes, pad_applied = pad_to_window(volumes, window)
    shape = np.array(_common_shape(volumes))
    w = np.pad(w, [(p, s - p - n) for p, s, n in zip(pad_applied, shape, w.shape)])

    flat = w.ravel()
    centres = rng.choice(flat.size, size=count, p=flat / flat.sum())
    centres = np.stack(np.unravel_index(centres, w.shape), axis=1)
    starts = np.clip(centres - np.array(window) // 2, 0, shape - np.array(window))
    return [_make_sample(subject_id, volumes, s, window, pad_applied, t) for s in starts]


def grid_padding(shape, grid: GridSpec) -> list:
    """Per-axis ``(before, after)`` padding used by grid sampling.

    ``border`` on both sides, plus extra trailing padding when the volume is
    shorter than one window.
    """
    widths = []
    for s, w, b in zip(shape, grid.window_size, grid.border):
        extra = max(0, w - (s + 2 * b))
        widths.append((b, b + extra))
    return widths


def grid_axis_starts(extent, window, stride) -> list:
    starts = list(range(0, extent - window + 1, stride))
    if extent - window not in starts:
        starts.append(extent - window)
    return starts


def grid_positions(shape, grid: GridSpec) -> list:
    """Window starts (padded coordinates) whose interiors tile the volume.

    Per axis: ``k * stride`` while the window fits in the padded extent,
    plus one final window flush with the far edge.
    """
    shape = _vec3(shape, "shape")
    per_axis = []
    for (before, after), s, w, st in zip(grid_padding(shape, grid), shape, grid.window_size, grid.stride):
        per_axis.append(grid_axis_starts(s + before + after, w, st))
    return [tuple(p) for p in product(*per_axis)]


def grid_sample(volumes, grid: GridSpec, subject_id=""):
    """Yield every grid window of a subject in systematic (x-slowest) order."""
    shape = _common_shape(volumes)
    widths = grid_padding(shape, grid)
    padded = {n: pad(v, widths) for n, v in volumes.items()}
    leading = tuple(b for b, _ in widths)
    for start in grid_positions(shape, grid):
        yield _make_sample(subject_id, padded, start, grid.window_size, leading)


def scaling_transform(in_shape, out_shape) -> np.ndarray:
    """Centre-aligned voxel map from an ``out_shape`` grid onto an ``in_shape`` grid.

    Output voxel ``i`` reads input coordinate ``(i + 0.5) * in / out - 0.5``
    so voxel footprints line up at both ends of each axis.
    """
    factors = np.asarray(in_shape, dtype=np.float64) / np.asarray(out_shape, dtype=np.float64)
    t = np.diag(list(factors) + [1.0])
    t[:3, 3] = 0.5 * (factors - 1.0)
    return t


def resize_sample(volumes, target_size, subject_id="", interps=None) -> WindowSample:
    """One whole-volume sample per subject, every source rescaled to ``target_size``."""
    target = _vec3(target_size, "target_size")
    if min(target) < 1:
        raise PreconditionViolation(f"target_size must be positive, got {target}")
    shape = _common_shape(volumes)
    interps = interps or {}
    t = scaling_transform(shape, target)
    resized = {n: resample(v, t, target, interps.get(n, Interpolation.TRILINEAR))
               for n, v in volumes.items()}
    first = _first(resized)
    return WindowSample(subject_id, {n: np.array(v.data) for n, v in resized.items()}, (0, 0, 0),
                        target, (0, 0, 0), None, first.affine)


# -- multi-lane stream ------------------------------------------------------

_END = object()


class _Failure:
    def __init__(self, task_index, exc):
        self.task_index = task_index
        self.exc = exc

    def reraise(self):
        # package errors keep their type (and exit code); anything else is wrapped
        if isinstance(self.exc, VoxelpipeError):
            raise self.exc
        raise SamplerError(f"sampler task {self.task_index} failed: {self.exc}") from self.exc


def task_rng(seed, task_index) -> np.random.Generator:
    """Generator for one task, derived from (seed, task index) only."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(task_index)]))


class SampleStream:
    """Run sampler tasks on producer threads and deliver batches.

    Each task is a callable ``task(rng) -> iterable of WindowSample``.  With
    ``ordered=True`` lane ``k`` owns tasks ``k, k + lanes, ...`` and the
    consumer reads the lanes round-robin, so batches do not depend on the
    number of lanes.  Total queued samples never exceed ``queue_capacity``;
    producers block when it is reached.
    """

    def __init__(self, tasks, lanes=1, queue_capacity=8, batch_size=1, seed=0, ordered=True):
        if lanes < 1 or batch_size < 1 or queue_capacity < batch_size:
            raise PreconditionViolation(
                f"need lanes >= 1 and queue_capacity >= batch_size >= 1 "
                f"(lanes={lanes}, queue_capacity={queue_capacity}, batch_size={batch_size})")
        self.tasks = list(tasks)
        self.lanes = max(1, min(lanes, queue_capacity, len(self.tasks) or 1))
        self.queue_capacity = queue_capacity
        self.batch_size = batch_size
        self.seed = seed
        self.ordered = ordered
        self.peak_queue_length = 0
        self._lock = threading.Lock()

    def _observe(self, queues):
        with self._lock:
            size = sum(q.qsize() for q in queues)
            if size > self.peak_queue_length:
                self.peak_queue_length = size

    def _put(self, q, item, queues, stop):
        while not stop.is_set():
            try:
                q.put(item, timeout=0.05)
            except queue.Full:
                continue
            self._observe(queues)
            return True
        return False

    def _run_tasks(self, indices, q, queues, stop, end_each_task):
        for i in indices:
            if stop.is_set():
                return
            try:
                for sample in self.tasks[i](task_rng(self.seed, i)):
                    if not self._put(q, sample, queues, stop):
                        return
            except Exception as exc:  # handed to the consumer
                logger.error("sampler task %d failed: %s", i, exc)
                self._put(q, _Failure(i, exc), queues, stop)
                return
            if end_each_task and not self._put(q, _END, queues, stop):
                return
        if not end_each_task:
            self._put(q, _END, queues, stop)

    def _samples(self):
        stop = threading.Event()
        n = len(self.tasks)
        if self.ordered:
            per_lane = max(1, self.queue_capacity // self.lanes)
            queues = [queue.Queue(maxsize=per_lane) for _ in range(self.lanes)]
            assignments = [range(k, n, self.lanes) for k in range(self.lanes)]
            targets = queues
        else:
            shared = queue.Queue(maxsize=self.queue_capacity)
            queues = [shared]
            assignments = [range(k, n, self.lanes) for k in range(self.lanes)]
            targets = [shared] * self.lanes

        threads = [threading.Thread(target=self._run_tasks,
                                    args=(assignments[k], targets[k], queues, stop, self.ordered),
                                    name=f"sampler-lane-{k}", daemon=True)
                   for k in range(self.lanes)]
        for t in threads:
            t.start()
        try:
            if self.ordered:
                for i in range(n):
                    q = queues[i % self.lanes]
                    while True:
                        item = q.get()
                        self._observe(queues)
                        if item is _END:
                            break
                        if isinstance(item, _Failure):
                            item.reraise()
                        yield item
            else:
                finished = 0
                while finished < self.lanes:
                    item = queues[0].get()
                    self._observe(queues)
                    if item is _END:
                        finished += 1
                    elif isinstance(item, _Failure):
                        item.reraise()
                    else:
                        yield item
        finally:
            stop.set()
            for q in queues:
                while True:
                    try:
                        q.get_nowait()
                    except queue.Empty:
                        break
            for t in threads:
                t.join()

    def __iter__(self):
        batch = []
        for sample in self._samples():
            batch.append(sample)
            if len(batch) == self.batch_size:
                yield batch
                batch = []
        if batch:
            yield batch


def run_sampler(tasks, lanes=1, queue_capacity=8, batch_size=1, seed=0, ordered=True) -> SampleStream:
    """Iterable of sample batches; see :class:`SampleStream`."""
    return SampleStream(tasks, lanes, queue_capacity, batch_size, seed, ordered)
