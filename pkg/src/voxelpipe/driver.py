"""Config-driven actions: build the reader -> normalization -> augmentation ->
sampler -> aggregator/evaluator pipeline and run one action over a dataset.
"""
from __future__ import annotations

import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import evaluate as ev
from .aggregate import OutputCanvas
from .augment import AugmentSpec, apply_to_subject, sample_transform
from .config import PipelineConfig, snapshot_config
from .dataset import PartitionTable, SourceSpec, SubjectRecord, discover_subjects, load_manifest, partition
from .errors import ConfigError, DataError, VoxelpipeError
from .nifti import load_volume, write_nifti
from .normalize import (apply_histogram_model, foreground_mask, load_histogram_models,
                        meanvar_normalize, save_histogram_models, train_histogram_model)
from .sample import (GridSpec, grid_sample, resize_sample, run_sampler, task_rng, uniform_sample,
                     weighted_sample)
from .volume import Interpolation, Volume

logger = logging.getLogger(__name__)

PARTITION_FILE = "partition.csv"
HISTOGRAM_FILE = "histogram_model.txt"
REPORT_FILE = "evaluation.csv"
OUTPUT_SUFFIX = "_niftynet_out.nii.gz"


@dataclass
class RunResult:
    exit_code: int
    artifacts: list = field(default_factory=list)
    snapshot: Path | None = None
    error: Exception | None = None


class _Run:
    """Tracks files written by one action so a failed run can remove them."""

    def __init__(self, cfg: PipelineConfig, out):
        self.cfg = cfg
        self.out = out
        self.artifacts = []
        self.model_dir = Path(cfg.system["model_dir"])

    def track(self, path):
        self.artifacts.append(Path(path))
        return Path(path)

    def write_text(self, path, text):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8", newline="")
        return self.track(path)

    def write_volume(self, v, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        return self.track(write_nifti(v, path))

    def cleanup(self):
        for path in reversed(self.artifacts):
            try:
                path.unlink()
            except FileNotFoundError:
                pass
        self.artifacts = []

    @property
    def output_dir(self) -> Path:
        configured = self.cfg.system["output_dir"]
        return Path(configured) if configured else self.model_dir / "output"


# -- dataset helpers --------------------------------------------------------

def source_specs(cfg: PipelineConfig) -> list:
    return [SourceSpec(name, s["path_to_search"], tuple(s["filename_contains"]),
                       tuple(s["filename_not_contains"]), Interpolation(s["interp"]))
            for name, s in cfg.sources.items()]


def interpolations(cfg: PipelineConfig) -> dict:
    return {name: Interpolation(s["interp"]) for name, s in cfg.sources.items()}


def load_subjects(cfg: PipelineConfig) -> list:
    if not cfg.sources:
        raise ConfigError("no input source sections defined")
    manifest = cfg.system["manifest"]
    if manifest:
        return load_manifest(manifest, sources=list(cfg.sources))
    for name, s in cfg.sources.items():
        if not s["path_to_search"]:
            raise ConfigError(f"[{name}] path_to_search is required without a manifest")
    return discover_subjects(source_specs(cfg))


def subjects_in_split(cfg: PipelineConfig, subjects, split) -> list:
    """Subjects of ``split`` when a partition table exists, otherwise all subjects."""
    path = Path(cfg.system["model_dir"]) / PARTITION_FILE
    if not path.exists():
        return list(subjects)
    wanted = set(PartitionTable.load(path).split(split))
    return [s for s in subjects if s.subject_id in wanted]


def _normalization_mask(cfg, volumes, v):
    name = cfg.normalisation["mask_source"]
    if name:
        return volumes[name].data[..., 0] > 0
    fg = foreground_mask(v)
    return fg if fg.any() else None


def histogram_model_path(cfg: PipelineConfig) -> Path:
    configured = cfg.normalisation["histogram_model"]
    return Path(configured) if configured else Path(cfg.system["model_dir"]) / HISTOGRAM_FILE


def load_subject_volumes(cfg: PipelineConfig, record: SubjectRecord, models=None) -> dict:
    """Read every source of a subject and normalize its image sources."""
    volumes = {name: load_volume(record.paths[name]) for name in cfg.sources}
    interps = interpolations(cfg)
    norm = cfg.normalisation
    for name, v in list(volumes.items()):
        if interps[name] is Interpolation.NEAREST:
            continue
        if norm["histogram"]:
            if models is None or name not in models:
                raise DataError(f"no histogram model for source {name!r}; run normalise-train first")
            v = apply_histogram_model(v, models[name], _normalization_mask(cfg, volumes, v))
        if norm["meanvar"]:
            v = meanvar_normalize(v, _normalization_mask(cfg, volumes, v))
        volumes[name] = v
    return volumes


def augment_spec(cfg: PipelineConfig) -> AugmentSpec:
    aug = cfg.augmentation
    return AugmentSpec(flip_axes=tuple(aug["flip_axes"]), rotation_range_deg=tuple(aug["rotation_range"]),
                       scale_range_pct=tuple(aug["scaling_percentage"]), seed=aug["random_seed"],
                       world_space=aug["space"] == "world")


def _stream(cfg, tasks):
    system = cfg.system
    return run_sampler(tasks, lanes=system["num_lanes"], queue_capacity=system["queue_capacity"],
                       batch_size=cfg.sampler["batch_size"], seed=system["seed"],
                       ordered=system["deterministic"])


# -- actions ----------------------------------------------------------------

def action_partition(run: _Run):
    cfg = run.cfg
    subjects = load_subjects(cfg)
    table = partition(subjects, cfg.partition["ratios"], cfg.partition["seed"])
    path = run.write_text(run.model_dir / PARTITION_FILE, table.to_csv())
    n_train, n_val, n_inf = table.sizes()
    logger.info("partitioned %d subjects: %d training, %d validation, %d inference",
                len(subjects), n_train, n_val, n_inf)
    print(f"wrote {path} ({n_train} training, {n_val} validation, {n_inf} inference)", file=run.out)


def action_normalise_train(run: _Run):
    cfg = run.cfg
    subjects = subjects_in_split(cfg, load_subjects(cfg), "training")
    if not subjects:
        raise DataError("no training subjects for histogram training")
    interps = interpolations(cfg)
    models = []
    for name in cfg.sources:
        if interps[name] is Interpolation.NEAREST:
            continue
        volumes, masks, names = [], [], []
        for record in subjects:
            all_sources = {n: load_volume(record.paths[n]) for n in {name, cfg.normalisation["mask_source"]} if n}
            v = all_sources[name]
            volumes.append(v)
            masks.append(_normalization_mask(cfg, all_sources, v))
            names.append(record.subject_id)
        models.append(train_histogram_model(volumes, cfg.normalisation["percentiles"], name, masks, names))
        logger.info("trained histogram model for %r on %d subjects", name, len(volumes))
    if not models:
        raise DataError("no image (trilinear) sources to train a histogram model on")
    path = histogram_model_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_histogram_models(models, path)
    run.track(path)
    print(f"wrote {path}", file=run.out)


def _sampler_task(cfg, record, index, models):
    kind = cfg.sampler["sampler"]
    sampler = cfg.sampler
    interps = interpolations(cfg)
    spec = augment_spec(cfg)

    def task(rng):
        volumes = load_subject_volumes(cfg, record, models)
        transform = None
        if kind in ("uniform", "weighted"):
            ref = next(iter(volumes.values()))
            aug_rng = task_rng(spec.seed, index)
            transform = sample_transform(spec, aug_rng, ref.shape, ref.spacing)
            if not transform.is_identity:
                volumes = apply_to_subject(volumes, transform, interps)
        if kind == "uniform":
            samples = uniform_sample(volumes, sampler["window_size"], sampler["sample_per_volume"], rng,
                                     record.subject_id)
        elif kind == "weighted":
            samples = weighted_sample(volumes, sampler["weight_source"], sampler["window_size"],
                                      sampler["sample_per_volume"], rng, record.subject_id)
        elif kind == "grid":
            samples = grid_sample(volumes, GridSpec(sampler["window_size"], sampler["border"]),
                                  record.subject_id)
        else:
            samples = [resize_sample(volumes, sampler["target_size"], record.subject_id, interps)]
        for s in samples:
            yield replace(s, transform_applied=transform) if transform is not None else s

    return task


def action_sample(run: _Run):
    cfg = run.cfg
    if cfg.sampler["sampler"] == "weighted" and not cfg.sampler["weight_source"]:
        raise ConfigError("[sampler] weight_source is required for the weighted sampler")
    subjects = subjects_in_split(cfg, load_subjects(cfg), "training")
    if not subjects:
        raise DataError("no subjects to sample from")
    models = load_histogram_models(histogram_model_path(cfg)) if cfg.normalisation["histogram"] else None
    tasks = [_sampler_task(cfg, record, i, models) for i, record in enumerate(subjects)]
    out_dir = run.model_dir / "samples"
    stream = _stream(cfg, tasks)
    count = 0
    for batch in stream:
        for sample in batch:
            for name in sorted(sample.patches):
                v = Volume(sample.patches[name], sample.affine)
                run.write_volume(v, out_dir / f"{count:05d}_{sample.subject_id}_{name}.nii.gz")
            count += 1
    logger.info("wrote %d samples (peak queue length %d of %d)", count, stream.peak_queue_length,
                cfg.system["queue_capacity"])
    print(f"wrote {count} samples to {out_dir}", file=run.out)


def action_aggregate_identity(run: _Run):
    """Grid-sample then re-aggregate the first source of each inference subject."""
    cfg = run.cfg
    subjects = subjects_in_split(cfg, load_subjects(cfg), "inference")
    if not subjects:
        raise DataError("no inference subjects to aggregate")
    name = next(iter(cfg.sources))
    grid = GridSpec(cfg.sampler["window_size"], cfg.sampler["border"])
    inputs = {}

    def make_task(record):
        def task(rng):
            v = load_volume(record.paths[name])
            yield from grid_sample({name: v}, grid, record.subject_id)
        return task

    canvases = {}
    for batch in _stream(cfg, [make_task(r) for r in subjects]):
        for sample in batch:
            sid = sample.subject_id
            if sid not in canvases:
                record = next(r for r in subjects if r.subject_id == sid)
                inputs[sid] = load_volume(record.paths[name])
                canvases[sid] = OutputCanvas.like(inputs[sid], grid, sid)
            canvas = canvases[sid]
            canvas.add(sample.patches[name], sample.spatial_start)
            if not canvas.missing_windows:
                result = canvas.finalize()
                if not np.array_equal(result.data, inputs[sid].data):
                    raise VoxelpipeError(f"aggregate-identity mismatch for subject {sid!r}")
                run.write_volume(result, run.output_dir / f"{sid}{OUTPUT_SUFFIX}")
                del canvases[sid], inputs[sid]
    if canvases:
        raise VoxelpipeError(f"grid windows missing for subjects {sorted(canvases)}")
    print(f"wrote {len(subjects)} aggregated volumes to {run.output_dir}", file=run.out)


def action_evaluate(run: _Run):
    cfg = run.cfg
    e = cfg.evaluation
    if not e["seg_source"] or not e["ref_source"]:
        raise ConfigError("[evaluation] seg_source and ref_source are required")
    subjects = load_subjects(cfg)
    rows = []
    if e["task"] == "regression":
        mask = cfg.normalisation["mask_source"] or None
        for record in subjects:
            rows += ev.evaluate_regression_subject(record.paths[e["seg_source"]], record.paths[e["ref_source"]],
                                                   record.paths[mask] if mask else None, record.subject_id)
        columns = ev.REGRESSION_METRICS
    else:
        metrics = e["metrics"] or ev.SEGMENTATION_METRICS + (ev.INTENSITY_METRICS if e["image_source"] else ())
        unknown = set(metrics) - set(ev.ALL_METRICS)
        if unknown:
            raise ConfigError(f"[evaluation] unknown metrics {sorted(unknown)}")
        for record in subjects:
            image = record.paths[e["image_source"]] if e["image_source"] else None
            rows += ev.evaluate_subject(record.paths[e["seg_source"]], record.paths[e["ref_source"]],
                                        list(e["labels"]) or None, metrics, record.subject_id, e["units"],
                                        image, e["overlap_threshold"], e["connectivity"])
        columns = [c for c in ev.SUMMARY_COLUMNS if c in metrics]
    path = Path(e["output"]) if e["output"] else run.model_dir / REPORT_FILE
    run.write_text(path, ev.report_csv(rows))
    table = ev.median_table(rows, columns)
    summary = ev.summary_csv(table, columns)
    run.write_text(path.with_name(path.stem + "_medians.csv"), summary)
    print(f"wrote {path} ({len(rows)} rows)", file=run.out)
    print("median per label:", file=run.out)
    print(summary.rstrip("\n"), file=run.out)


def action_inspect(run: _Run):
    cfg = run.cfg
    subjects = load_subjects(cfg)
    header = f"{'subject':<16} {'source':<10} {'shape':<18} {'spacing':<22} {'dtype':<8} {'min':>10} {'max':>10} {'mean':>10}"
    print(header, file=run.out)
    for record in subjects:
        for name in cfg.sources:
            v = load_volume(record.paths[name])
            shape = "x".join(str(s) for s in v.shape) + (f"x{v.n_channels}" if v.n_channels > 1 else "")
            spacing = ",".join(f"{s:.3g}" for s in v.spacing)
            data = v.data.astype(np.float64)
            print(f"{record.subject_id:<16} {name:<10} {shape:<18} {spacing:<22} {str(v.dtype):<8} "
                  f"{data.min():>10.4g} {data.max():>10.4g} {data.mean():>10.4g}", file=run.out)


ACTIONS = {
    "partition": action_partition,
    "normalise-train": action_normalise_train,
    "sample": action_sample,
    "aggregate-identity": action_aggregate_identity,
    "evaluate": action_evaluate,
    "inspect": action_inspect,
}


def run_action(cfg: PipelineConfig, action=None, out=None) -> RunResult:
    """Snapshot the configuration, run one action and report an exit code.

    Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
    error.  Files written by a failed action are removed; the snapshot is kept.
    """
    action = action or cfg.system["action"]
    if action not in ACTIONS:
        err = ConfigError(f"unknown action {action!r}; expected one of {sorted(ACTIONS)}")
        logger.error("%s", err)
        return RunResult(err.exit_code, error=err)
    cfg.system["action"] = action
    run = _Run(cfg, out or sys.stdout)
    try:
        snapshot = snapshot_config(cfg, run.model_dir, action)
    except VoxelpipeError as err:
        logger.error("%s", err)
        return RunResult(err.exit_code, error=err)
    logger.info("action %s, configuration snapshot %s", action, snapshot)
    try:
        ACTIONS[action](run)
    except VoxelpipeError as err:
        logger.error("%s: %s", type(err).__name__, err)
        run.cleanup()
        return RunResult(err.exit_code, snapshot=snapshot, error=err)
    except OSError as err:
        logger.error("I/O error: %s", err)
        run.cleanup()
        return RunResult(DataError.exit_code, snapshot=snapshot, error=err)
    except Exception as err:  # unexpected failures still map onto the runtime exit code
        logger.exception("unexpected failure in %s", action)
        run.cleanup()
        return RunResult(VoxelpipeError.exit_code, snapshot=snapshot, error=err)
    return RunResult(0, run.artifacts, snapshot)
