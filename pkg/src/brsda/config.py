"""Experiment configuration: typed sections, YAML I/O, overrides, presets, digest.

A config file is a nested YAML mapping with the sections ``dataset``,
``backbone``, ``augmentation`` and ``schedule`` plus top-level ``seed``,
``name`` and ``output_dir``. Unknown keys are rejected. See the README for the
full schema.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .data import SyntheticSpec
from .errors import ConfigError


@dataclass
class DatasetConfig:
    kind: str = "synthetic"
    path: Optional[str] = None
    layout: Optional[str] = None
    num_classes: Optional[int] = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)


@dataclass
class BackboneConfig:
    name: str = "cnn"
    feature_dim: int = 64
    widths: Optional[tuple[int, ...]] = None
    hidden_dim: Optional[int] = None


@dataclass
class AugmentationConfig:
    """Augmentation hyperparameters.

    ``lam`` is the per-coordinate drop probability (``lambda`` in config files),
    ``U`` the number of independent (mask, magnitude) draws per step. ``U = 0``
    or ``alpha_final = 0`` turns augmentation off. ``recon_input`` selects
    whether the reconstructor sees the masked magnitudes actually added to the
    features (``"masked"``) or the raw draw (``"unmasked"``).
    """

    lam: float = field(default=0.6, metadata={"alias": "lambda"})
    U: int = 7
    alpha_final: float = 0.5
    alpha_ramp_fraction: float = 0.2
    recon_input: str = "masked"

    @property
    def enabled(self) -> bool:
        return self.U > 0 and self.alpha_final > 0


@dataclass
class TrainSchedule:
    total_epochs: int = 30
    warmup_epochs: int = 5
    base_lr: float = 1e-3
    batch_size: int = 32
    weight_decay: float = 0.01
    grad_clip: Optional[float] = 5.0


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    seed: int = 0
    name: str = "run"
    output_dir: Optional[str] = None

    def validate(self) -> "ExperimentConfig":
        validate(self)
        return self

    def to_dict(self) -> dict:
        return to_dict(self)

    @property
    def digest(self) -> str:
        return config_digest(self)


def _key(f: dataclasses.Field) -> str:
    return f.metadata.get("alias", f.name)


def to_dict(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {_key(f): to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [to_dict(v) for v in obj]
    return obj


def _unwrap_optional(tp):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0], True
    return tp, False


def _coerce(value, tp, where: str):
    tp, optional = _unwrap_optional(tp)
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{where}: value is required")
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, where)
    origin = typing.get_origin(tp)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{where}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{where}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(v, a, f"{where}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported field type {tp}")  # pragma: no cover


def from_dict(cls, data, where: str = ""):
    """Build dataclass ``cls`` from a mapping, filling defaults and rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    fields = {_key(f): f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for key, f in fields.items():
        if key in data:
            path = f"{where}.{key}" if where else key
            kwargs[f.name] = _coerce(data[key], hints[f.name], path)
    return cls(**kwargs)


def validate(cfg: ExperimentConfig) -> None:
    ds = cfg.dataset
    if ds.kind not in ("synthetic", "archive"):
        raise ConfigError(f"dataset.kind: expected 'synthetic' or 'archive', got {ds.kind!r}")
    if ds.num_classes is not None and ds.num_classes < 2:
        raise ConfigError("dataset.num_classes: must be >= 2")
    if cfg.backbone.feature_dim < 1:
        raise ConfigError("backbone.feature_dim: must be >= 1")
    aug = cfg.augmentation
    if not 0.0 <= aug.lam <= 1.0:
        raise ConfigError(f"augmentation.lambda: must lie in [0, 1], got {aug.lam}")
    if aug.U < 0:
        raise ConfigError(f"augmentation.U: must be >= 0, got {aug.U}")
    if not 0.0 <= aug.alpha_final <= 1.0:
        raise ConfigError(f"augmentation.alpha_final: must lie in [0, 1], got {aug.alpha_final}")
    if not 0.0 < aug.alpha_ramp_fraction <= 1.0:
        raise ConfigError("augmentation.alpha_ramp_fraction: must lie in (0, 1]")
    if aug.recon_input not in ("masked", "unmasked"):
        raise ConfigError("augmentation.recon_input: expected 'masked' or 'unmasked'")
    sch = cfg.schedule
    if sch.total_epochs < 1:
        raise ConfigError("schedule.total_epochs: must be >= 1")
    if not 0 <= sch.warmup_epochs < sch.total_epochs:
        raise ConfigError("schedule.warmup_epochs: must satisfy 0 <= warmup < total_epochs")
    if sch.base_lr <= 0:
        raise ConfigError("schedule.base_lr: must be > 0")
    if sch.batch_size < 2:
        raise ConfigError("schedule.batch_size: must be >= 2 (batch normalisation)")
    if sch.weight_decay < 0:
        raise ConfigError("schedule.weight_decay: must be >= 0")
    if sch.grad_clip is not None and sch.grad_clip <= 0:
        raise ConfigError("schedule.grad_clip: must be > 0 or null")


def config_digest(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form, ignoring ``output_dir``."""
    d = to_dict(cfg)
    d.pop("output_dir", None)
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def parse_override(expr: str) -> tuple[list[str], Any]:
    if "=" not in expr:
        raise ConfigError(f"override {expr!r} is not of the form dotted.path=value")
    key, raw = expr.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError(f"override {expr!r} has an empty key")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {expr!r}: cannot parse value: {exc}") from exc
    return path, value


def apply_overrides(data: dict, overrides) -> dict:
    data = copy.deepcopy(data)
    for expr in overrides or ():
        path, value = parse_override(expr)
        node = data
        for part in path[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            if not isinstance(child, dict):
                raise ConfigError(f"override {expr!r}: {part} is not a section")
            node = child
        node[path[-1]] = value
    return data


def build_config(data: dict | None = None, overrides=()) -> ExperimentConfig:
    merged = apply_overrides(to_dict(ExperimentConfig()), [])
    _deep_update(merged, data or {})
    merged = apply_overrides(merged, overrides)
    return from_dict(ExperimentConfig, merged).validate()


def _deep_update(base: dict, new: dict) -> None:
    if not isinstance(new, dict):
        raise ConfigError(f"config: expected a mapping, got {type(new).__name__}")
    for k, v in new.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v


def load_config(source: str | Path, overrides=()) -> ExperimentConfig:
    """Load a YAML file or a preset name, then apply ``dotted.path=value`` overrides."""
    source = str(source)
    if source in PRESETS:
        return build_config(PRESETS[source], overrides)
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"config file not found and not a preset: {source}")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return build_config(data, overrides)


def dump_config(cfg: ExperimentConfig, path: str | Path | None = None) -> str:
    text = yaml.safe_dump(to_dict(cfg), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text


# Desk-scale default: 200 noisy 40x40 training images from a 4-class synthetic
# problem, where the plain CNN overfits visibly within 30 epochs.
DESK = {
    "name": "desk-synthetic",
    "dataset": {
        "kind": "synthetic",
        "synthetic": {"classes": 4, "samples_per_class": 100, "image_side": 40,
                      "noise_sigma": 0.6, "split_ratios": [0.5, 0.25, 0.25]},
    },
    "backbone": {"name": "cnn", "feature_dim": 64, "widths": [32, 64]},
}

# (dataset, network, lambda, U) rows of the published hyperparameter table; alpha is 0.5 throughout.
_TABLE = [
    ("breastmnist", "resnet18", 0.6, 7),
    ("breastmnist", "resnet50", 0.6, 7),
    ("breastmnist", "efficientnet_b0", 0.6, 7),
    ("breastmnist", "densenet121", 0.6, 10),
    ("retinamnist", "resnet18", 0.6, 10),
    ("lung", "resnet18", 0.8, 10),
    ("btmri", "resnet18", 0.8, 10),
    ("catar", "resnet18", 0.9, 10),
    ("organmnist3d", "resnet18", 0.8, 10),
    ("nodulemnist3d", "resnet18", 0.9, 10),
    ("adrenalmnist3d", "resnet18", 0.9, 10),
    ("fracturemnist3d", "resnet18", 0.5, 10),
    ("vesselmnist3d", "resnet18", 0.8, 10),
    ("synapsemnist3d", "resnet18", 0.4, 10),
]

_MEDMNIST_2D_LAYOUT = {"breastmnist": "medmnist2d", "retinamnist": "medmnist2d"}


def _table_preset(dataset: str, network: str, lam: float, u: int) -> dict:
    volumetric = dataset.endswith("3d")
    return {
        "name": f"{dataset}-{network}",
        "dataset": {
            "kind": "archive",
            "path": None,
            "layout": "medmnist3d" if volumetric else _MEDMNIST_2D_LAYOUT.get(dataset),
        },
        # No shipped 3D ResNet; volumes fall back to the compact 3D CNN.
        "backbone": {"name": "cnn" if volumetric else network},
        "augmentation": {"lambda": lam, "U": u, "alpha_final": 0.5},
        "schedule": {"total_epochs": 100, "warmup_epochs": 5, "base_lr": 0.001},
    }


PRESETS: dict[str, dict] = {"desk-synthetic": DESK}
PRESETS.update({f"{d}-{n}": _table_preset(d, n, lam, u) for d, n, lam, u in _TABLE})
