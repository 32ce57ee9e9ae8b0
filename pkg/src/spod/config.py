"""Flat run configuration: ``section.key = value`` lines.

Unknown keys and duplicates are rejected. ``seed`` is mandatory once a
config is finalized; every report echoes the effective configuration.
Optional keys accept the literal ``none``.
"""

from __future__ import annotations

from .data import OOD_MODES
from .detector import DetectorConfig, GLOBAL_MEAN_MODES, REDUCERS, VARIANTS
from .errors import ValidationError
from .nn import ACTIVATIONS


def _parse_int(v: str) -> int:
    try:
        return int(v)
    except ValueError as exc:
        raise ValidationError(f"expected an integer, got {v!r}") from exc


def _parse_float(v: str) -> float:
    try:
        return float(v)
    except ValueError as exc:
        raise ValidationError(f"expected a number, got {v!r}") from exc


def _parse_opt_float(v: str):
    return None if v.lower() == "none" else _parse_float(v)


def _parse_int_list(v: str) -> list:
    parts = [p.strip() for p in v.split(",") if p.strip()]
    if not parts:
        raise ValidationError("expected a comma-separated list of integers")
    return [_parse_int(p) for p in parts]


def _parse_str_list(v: str) -> list:
    parts = [p.strip() for p in v.split(",") if p.strip()]
    if not parts:
        raise ValidationError("expected a comma-separated list")
    return parts


def _parse_opt_str_list(v: str):
    return None if v.lower() == "none" else _parse_str_list(v)


def _choice(options):
    def parse(v: str) -> str:
        if v not in options:
            raise ValidationError(f"expected one of {options}, got {v!r}")
        return v
    return parse


def _parse_aggregation(v: str):
    if v.lower() == "none":
        return None
    if v in ("max", "sum"):
        return v
    return _parse_int(v)


SCHEMA = {
    "seed": _parse_int,
    "data.num_classes": _parse_int,
    "data.input_dim": _parse_int,
    "data.samples_per_class": _parse_int,
    "data.mean_scale": _parse_float,
    "data.noise_sigma": _parse_float,
    "data.ood_mode": _choice(OOD_MODES),
    "data.label_noise": _parse_float,
    "model.hidden": _parse_int_list,
    "model.activation": _choice(ACTIVATIONS),
    "train.epochs": _parse_int,
    "train.lr": _parse_float,
    "train.momentum": _parse_float,
    "train.weight_decay": _parse_float,
    "train.batch_size": _parse_int,
    "detector.variant": _choice(VARIANTS),
    "detector.epsilon": _parse_opt_float,
    "detector.aggregation": _parse_aggregation,
    "detector.subset": _parse_opt_str_list,
    "detector.dice_p": _parse_opt_float,
    "detector.delta": _parse_float,
    "detector.global_mean_mode": _choice(GLOBAL_MEAN_MODES),
    "detector.batch_cap": _parse_int,
    "detector.vec_reduce": _choice(REDUCERS),
    "eval.detectors": _parse_str_list,
    "eval.tpr": _parse_float,
}

DEFAULTS = {
    "seed": None,
    "data.num_classes": 5,
    "data.input_dim": 32,
    "data.samples_per_class": 100,
    "data.mean_scale": 3.0,
    "data.noise_sigma": 1.0,
    "data.ood_mode": "shifted_means",
    "data.label_noise": 0.0,
    "model.hidden": [64],
    "model.activation": "relu",
    "train.epochs": 150,
    "train.lr": 0.05,
    "train.momentum": 0.9,
    "train.weight_decay": 5e-4,
    "train.batch_size": 120,
    "detector.variant": "means",
    "detector.epsilon": None,
    "detector.aggregation": "max",
    "detector.subset": None,
    "detector.dice_p": None,
    "detector.delta": 0.5,
    "detector.global_mean_mode": "class_weighted",
    "detector.batch_cap": 4096,
    "detector.vec_reduce": "max",
    "eval.detectors": ["subspace", "msp", "energy"],
    "eval.tpr": 0.95,
}


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in SCHEMA:
            raise ValidationError(f"line {lineno}: unknown config key {key!r}")
        if key in out:
            raise ValidationError(f"line {lineno}: duplicate config key {key!r}")
        if not value:
            raise ValidationError(f"line {lineno}: empty value for {key!r}")
        out[key] = SCHEMA[key](value)
    return out


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def finalize(cfg: dict) -> dict:
    """Fill defaults, reject unknown keys, and require a seed."""
    merged = dict(DEFAULTS)
    for key, value in cfg.items():
        if key not in SCHEMA:
            raise ValidationError(f"unknown config key {key!r}")
        merged[key] = value
    if merged["seed"] is None:
        raise ValidationError("seed is mandatory (set 'seed = N' or pass --seed)")
    if not 0.0 <= merged["data.label_noise"] <= 1.0:
        raise ValidationError("data.label_noise must lie in [0, 1]")
    if not 0.0 < merged["eval.tpr"] <= 1.0:
        raise ValidationError("eval.tpr must lie in (0, 1]")
    return merged


def config_to_detector(cfg: dict) -> DetectorConfig:
    """Build the detector options from a finalized flat config."""
    variant = cfg["detector.variant"]
    aggregation = None if variant == "vec" else cfg["detector.aggregation"]
    subset = cfg["detector.subset"]
    return DetectorConfig(
        variant=variant,
        epsilon=cfg["detector.epsilon"],
        aggregation=aggregation,
        subset_groups=tuple(subset) if subset else None,
        dice_p=cfg["detector.dice_p"],
        threshold_delta=cfg["detector.delta"],
        global_mean_mode=cfg["detector.global_mean_mode"],
        batch_cap=cfg["detector.batch_cap"],
        vec_reduce=cfg["detector.vec_reduce"],
    )
