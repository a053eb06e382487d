"""INI pipeline configuration: schema, defaults, overrides and snapshots.

Reserved sections are listed in :data:`SCHEMA`; every other section defines
an input source.  Lists are comma separated and booleans are ``true`` or
``false``.  Unknown keys are errors.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, ConfigTypeError, IoError, UnknownConfigKey

ACTIONS = ("partition", "normalise-train", "sample", "aggregate-identity", "evaluate", "inspect")
SAMPLERS = ("uniform", "weighted", "grid", "resize")


class Kind:
    INT = "int"
    FLOAT = "float"
    BOOL = "bool"
    STR = "str"
    INT3 = "int3"
    FLOAT_LIST = "float_list"
    INT_LIST = "int_list"
    STR_LIST = "str_list"


K = Kind

# section -> key -> (kind, default, allowed values or None)
SCHEMA = {
    "system": {
        "action": (K.STR, "inspect", ACTIONS),
        "model_dir": (K.STR, "./model", None),
        "output_dir": (K.STR, "", None),
        "manifest": (K.STR, "", None),
        "seed": (K.INT, 0, None),
        "num_lanes": (K.INT, 1, None),
        "queue_capacity": (K.INT, 8, None),
        "deterministic": (K.BOOL, True, None),
    },
    "sampler": {
        "sampler": (K.STR, "uniform", SAMPLERS),
        "window_size": (K.INT3, (64, 64, 64), None),
        "border": (K.INT3, (0, 0, 0), None),
        "target_size": (K.INT3, (64, 64, 64), None),
        "batch_size": (K.INT, 1, None),
        "sample_per_volume": (K.INT, 1, None),
        "weight_source": (K.STR, "", None),
    },
    "augmentation": {
        "flip_axes": (K.STR_LIST, (), None),
        "rotation_range": (K.FLOAT_LIST, (-10.0, 10.0), None),
        "scaling_percentage": (K.FLOAT_LIST, (-10.0, 10.0), None),
        "random_seed": (K.INT, 0, None),
        "space": (K.STR, "voxel", ("voxel", "world")),
    },
    "normalisation": {
        "meanvar": (K.BOOL, False, None),
        "histogram": (K.BOOL, False, None),
        "histogram_model": (K.STR, "", None),
        "percentiles": (K.FLOAT_LIST, (1.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 99.0), None),
        "mask_source": (K.STR, "", None),
    },
    "partition": {
        "ratios": (K.FLOAT_LIST, (0.8, 0.1, 0.1), None),
        "seed": (K.INT, 0, None),
    },
    "evaluation": {
        "task": (K.STR, "segmentation", ("segmentation", "regression")),
        "seg_source": (K.STR, "", None),
        "ref_source": (K.STR, "", None),
        "image_source": (K.STR, "", None),
        "metrics": (K.STR_LIST, (), None),
        "labels": (K.INT_LIST, (), None),
        "units": (K.STR, "mm", ("mm", "voxel")),
        "connectivity": (K.INT, 26, (6, 26)),
        "overlap_threshold": (K.FLOAT, 0.0, None),
        "output": (K.STR, "", None),
    },
}

SOURCE_SCHEMA = {
    "path_to_search": (K.STR, "", None),
    "filename_contains": (K.STR_LIST, (), None),
    "filename_not_contains": (K.STR_LIST, (), None),
    "interp": (K.STR, "trilinear", ("nearest", "trilinear")),
}

SOURCE_REFERENCES = (
    ("sampler", "weight_source"),
    ("normalisation", "mask_source"),
    ("evaluation", "seg_source"),
    ("evaluation", "ref_source"),
    ("evaluation", "image_source"),
)


def parse_value(kind, text, where=""):
    text = text.strip()
    try:
        if kind == K.INT:
            return int(text)
        if kind == K.FLOAT:
            return float(text)
        if kind == K.BOOL:
            lowered = text.lower()
            if lowered not in ("true", "false"):
                raise ValueError(f"expected true or false, got {text!r}")
            return lowered == "true"
        if kind == K.STR:
            return text
        items = [t.strip() for t in text.split(",")] if text else []
        if any(not t for t in items):
            raise ValueError(f"empty list element in {text!r}")
        if kind == K.INT3:
            values = tuple(int(t) for t in items)
            if len(values) == 1:
                values = values * 3
            if len(values) != 3:
                raise ValueError(f"expected 1 or 3 integers, got {len(values)}")
            return values
        if kind == K.INT_LIST:
            return tuple(int(t) for t in items)
        if kind == K.FLOAT_LIST:
            return tuple(float(t) for t in items)
        if kind == K.STR_LIST:
            return tuple(items)
    except ValueError as exc:
        raise ConfigTypeError(f"{where}: {exc}") from exc
    raise AssertionError(f"unhandled kind {kind}")


def format_value(kind, value) -> str:
    if kind == K.BOOL:
        return "true" if value else "false"
    if kind == K.FLOAT:
        return repr(float(value))
    if kind in (K.INT3, K.INT_LIST, K.STR_LIST):
        return ", ".join(str(v) for v in value)
    if kind == K.FLOAT_LIST:
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


def _check_allowed(section, key, value, allowed):
    if allowed is not None and value not in allowed:
        raise ConfigTypeError(f"[{section}] {key} = {value!r}: expected one of {list(allowed)}")


@dataclass
class PipelineConfig:
    """Fully resolved configuration: every key of every section is set."""

    sections: dict = field(default_factory=dict)
    sources: dict = field(default_factory=dict)

    def __getitem__(self, section):
        if section in self.sections:
            return self.sections[section]
        return self.sources[section]

    @property
    def system(self):
        return self.sections["system"]

    @property
    def sampler(self):
        return self.sections["sampler"]

    @property
    def augmentation(self):
        return self.sections["augmentation"]

    @property
    def normalisation(self):
        return self.sections["normalisation"]

    @property
    def partition(self):
        return self.sections["partition"]

    @property
    def evaluation(self):
        return self.sections["evaluation"]

    def to_ini(self) -> str:
        lines = ["# voxelpipe configuration snapshot (all defaults materialized)"]
        for section, keys in SCHEMA.items():
            lines.append(f"\n[{section}]")
            for key, (kind, _, _) in keys.items():
                lines.append(f"{key} = {format_value(kind, self.sections[section][key])}")
        for name, values in self.sources.items():
            lines.append(f"\n[{name}]")
            for key, (kind, _, _) in SOURCE_SCHEMA.items():
                lines.append(f"{key} = {format_value(kind, values[key])}")
        return "\n".join(lines) + "\n"


def default_config() -> PipelineConfig:
    return PipelineConfig({s: {k: spec[1] for k, spec in keys.items()} for s, keys in SCHEMA.items()}, {})


def _set(cfg: PipelineConfig, section, key, text):
    if section in SCHEMA:
        schema = SCHEMA[section]
        target = cfg.sections[section]
    elif section in cfg.sources:
        schema = SOURCE_SCHEMA
        target = cfg.sources[section]
    else:
        raise UnknownConfigKey(section, key)
    if key not in schema:
        raise UnknownConfigKey(section, key)
    kind, _, allowed = schema[key]
    value = parse_value(kind, text, f"[{section}] {key}")
    _check_allowed(section, key, value, allowed)
    target[key] = value


def parse_overrides(overrides) -> list:
    parsed = []
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        lhs, value = item.split("=", 1)
        section, key = lhs.rsplit(".", 1)
        parsed.append((section.strip(), key.strip().lower(), value))
    return parsed


def parse_config_text(text, overrides=(), where="<config>") -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=None, strict=True,
                                       default_section="\x00unused")
    try:
        parser.read_string(text, source=where)
    except configparser.Error as exc:
        raise ConfigError(f"{where}: {exc}") from exc

    cfg = default_config()
    for section in parser.sections():
        if section not in SCHEMA:
            if not section.strip() or any(ch in section for ch in ".=[]"):
                raise ConfigError(f"invalid source section name [{section}]")
            cfg.sources[section] = {k: spec[1] for k, spec in SOURCE_SCHEMA.items()}
    for section in parser.sections():
        for key, value in parser.items(section):
            _set(cfg, section, key, value)
    for section, key, value in parse_overrides(overrides):
        _set(cfg, section, key, value)
    validate(cfg)
    return cfg


def parse_config(path, overrides=()) -> PipelineConfig:
    """Read an INI file, apply ``section.key=value`` overrides and validate."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    return parse_config_text(text, overrides, str(path))


def validate(cfg: PipelineConfig):
    for section, key in SOURCE_REFERENCES:
        name = cfg.sections[section][key]
        if name and name not in cfg.sources:
            raise ConfigError(f"[{section}] {key} refers to undefined source {name!r}")
    system, sampler = cfg.system, cfg.sampler
    if system["num_lanes"] < 1:
        raise ConfigTypeError("[system] num_lanes must be >= 1")
    if sampler["batch_size"] < 1 or system["queue_capacity"] < sampler["batch_size"]:
        raise ConfigTypeError("need [system] queue_capacity >= [sampler] batch_size >= 1")
    if sampler["sample_per_volume"] < 1:
        raise ConfigTypeError("[sampler] sample_per_volume must be >= 1")
    if min(sampler["window_size"]) < 1 or min(sampler["target_size"]) < 1:
        raise ConfigTypeError("[sampler] window_size and target_size must be positive")
    if min(sampler["border"]) < 0 or any(
            w - 2 * b < 1 for w, b in zip(sampler["window_size"], sampler["border"])):
        raise ConfigTypeError("[sampler] border must be >= 0 and leave a window interior")
    aug = cfg.augmentation
    for key in ("rotation_range", "scaling_percentage"):
        if len(aug[key]) != 2 or aug[key][0] > aug[key][1]:
            raise ConfigTypeError(f"[augmentation] {key} must be 'low, high' with low <= high")
    if 1.0 + aug["scaling_percentage"][0] / 100.0 <= 0:
        raise ConfigTypeError("[augmentation] scaling_percentage must keep the scale factor positive")
    if any(a not in ("x", "y", "z") for a in aug["flip_axes"]):
        raise ConfigTypeError("[augmentation] flip_axes must be drawn from x, y, z")
    ratios = cfg.partition["ratios"]
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigTypeError("[partition] ratios must be 3 non-negative values summing to 1")
    p = cfg.normalisation["percentiles"]
    if len(p) < 2 or any(not 0 < x < 100 for x in p) or any(b <= a for a, b in zip(p, p[1:])):
        raise ConfigTypeError("[normalisation] percentiles must be strictly ascending in (0, 100)")


def snapshot_config(cfg: PipelineConfig, out_dir, action=None) -> Path:
    """Write the resolved configuration as ``settings_<action>.ini`` in ``out_dir``."""
    action = action or cfg.system["action"]
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"settings_{action}.ini"
        path.write_text(cfg.to_ini(), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write configuration snapshot to {out_dir}: {exc}") from exc
    return path
