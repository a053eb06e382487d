"""Medical volume pipeline toolkit.

NIfTI-1 I/O, dataset discovery and partitioning, intensity normalization,
spatial augmentation, window sampling and aggregation, and segmentation /
regression evaluation, plus a config-driven command line driver.
"""
from .aggregate import OutputCanvas, grid_aggregate, resize_aggregate
from .augment import AugmentSpec, SampledTransform, apply_transform, sample_transform
from .config import PipelineConfig, parse_config, snapshot_config
from .dataset import (PartitionTable, SourceSpec, SubjectRecord, discover_subjects, load_manifest,
                      partition)
from .evaluate import (BinaryMask, evaluate_subject, intensity_stats, overlap_metrics, region_metrics,
                       regression_metrics, shape_metrics, surface_distances)
from .nifti import NiftiHeader, qform_to_affine, read_nifti, write_nifti
from .normalize import (HistogramModel, apply_histogram_model, meanvar_normalize,
                        train_histogram_model)
from .sample import (GridSpec, WindowSample, grid_positions, grid_sample, resize_sample, run_sampler,
                     uniform_sample, weighted_sample)
from .volume import Interpolation, Volume, pad, resample, voxel_to_world, world_to_voxel

__all__ = [
    "OutputCanvas", "grid_aggregate", "resize_aggregate", "AugmentSpec", "SampledTransform",
    "apply_transform", "sample_transform", "PipelineConfig", "parse_config", "snapshot_config",
    "PartitionTable", "SourceSpec", "SubjectRecord", "discover_subjects", "load_manifest",
    "partition", "BinaryMask", "evaluate_subject", "intensity_stats", "overlap_metrics",
    "region_metrics", "regression_metrics", "shape_metrics", "surface_distances", "NiftiHeader",
    "qform_to_affine", "read_nifti", "write_nifti", "HistogramModel", "apply_histogram_model",
    "meanvar_normalize", "train_histogram_model", "GridSpec", "WindowSample", "grid_positions",
    "grid_sample", "resize_sample", "run_sampler", "uniform_sample", "weighted_sample",
    "Interpolation", "Volume", "pad", "resample", "voxel_to_world", "world_to_voxel",
]

__version__ = "0.1.0"
