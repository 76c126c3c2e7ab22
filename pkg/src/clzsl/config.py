"""Flat training configuration, preset profiles, and config-file parsing.

Config files are flat JSON objects whose keys are TrainConfig field names.
Resolution order: dataclass defaults, then a named preset, then file values,
then explicit overrides; the fully resolved config is echoed into the run
manifest so every run can be replayed exactly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 50
    lr_theta: float = 5e-4
    lr_phi: float = 1e-2
    eta: float = 0.1
    temperature: float = 10.0
    percentile: float = 0.7
    kappa: float = 0.9
    beta: float = 0.995
    k_neighbors: int = 10
    update_start_epoch: int = 25
    seed: int = 0
    grad_clip_norm: float = 10.0  # 0 disables clipping
    pcl_enabled: bool = True
    pup_enabled: bool = True
    attention_axis: str = "regions"  # or "attributes"
    pup_branch: str = "shared"  # or "independent"
    unseen_update_source: str = "epoch_means"  # or "updated_seen"
    checkpoint_every: int = 1  # 0: final epoch only
    pcl_hidden1: int = 64
    pcl_delta_dim: int = 32
    pcl_label_dim: int = 32
    pcl_epoch_dim: int = 32
    pcl_hidden2: int = 128
    pcl_epoch_buckets: int = 100

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        for name in ("lr_theta", "lr_phi", "eta", "grad_clip_norm"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if not 0.0 < self.percentile <= 1.0:
            raise ConfigError(f"percentile must lie in (0, 1], got {self.percentile}")
        if not 0.0 <= self.kappa < 1.0:
            raise ConfigError(f"kappa must lie in [0, 1), got {self.kappa}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if self.k_neighbors < 1:
            raise ConfigError(f"k_neighbors must be positive, got {self.k_neighbors}")
        if self.update_start_epoch > self.epochs and self.pup_enabled and self.epochs > 0:
            # legal: the update guard simply never fires
            pass
        if self.attention_axis not in ("regions", "attributes"):
            raise ConfigError(f"attention_axis must be 'regions' or 'attributes', got {self.attention_axis!r}")
        if self.pup_branch not in ("shared", "independent"):
            raise ConfigError(f"pup_branch must be 'shared' or 'independent', got {self.pup_branch!r}")
        if self.unseen_update_source not in ("epoch_means", "updated_seen"):
            raise ConfigError(f"unseen_update_source must be 'epoch_means' or 'updated_seen'")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


# Named profiles carrying the published per-dataset hyperparameters.  Values
# absent from the write-ups (marked below) use this package's defaults.
TRAIN_PRESETS: dict[str, dict] = {
    "awa2-paper": {
        "lr_theta": 5e-4, "lr_phi": 1e-2, "eta": 0.1, "beta": 0.995,
        "update_start_epoch": 25,
        # temperature/percentile/kappa were only reported for the two
        # fine-grained datasets; k here follows the ~5%-of-classes rule.
        "temperature": 10.0, "percentile": 0.7, "kappa": 0.9, "k_neighbors": 2,
    },
    "sun-paper": {
        "lr_theta": 3e-4, "lr_phi": 1e-2, "eta": 1e-4, "beta": 0.995,
        "temperature": 30.0, "percentile": 0.7, "kappa": 0.5,
        "k_neighbors": 35, "update_start_epoch": 25,
    },
    "cub-paper": {
        "lr_theta": 5e-4, "lr_phi": 1e-2, "eta": 0.08, "beta": 0.995,
        "temperature": 10.0, "percentile": 0.8, "kappa": 0.9,
        "k_neighbors": 10, "update_start_epoch": 15,
    },
    # Tuned for the default synthetic corpus: full-batch steps converge to a
    # stable terminal state, the weight softmax stays smooth over the large
    # batch, and prototype updates blend gently over the last quarter.
    "synthetic-desk": {
        "epochs": 80, "batch_size": 480, "lr_theta": 5e-3, "lr_phi": 1e-3,
        "eta": 0.005, "temperature": 30.0, "percentile": 0.7, "kappa": 0.9,
        "beta": 0.995, "k_neighbors": 2, "update_start_epoch": 60,
    },
}

_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _coerce(name: str, value):
    if name not in _FIELDS:
        raise ConfigError(f"unknown config field {name!r}")
    target = _FIELDS[name].type
    try:
        if target == "bool" or isinstance(_FIELDS[name].default, bool):
            if isinstance(value, bool):
                return value
            if isinstance(value, str):
                if value.lower() in ("true", "1", "yes"):
                    return True
                if value.lower() in ("false", "0", "no"):
                    return False
            raise ValueError(value)
        if isinstance(_FIELDS[name].default, int) and not isinstance(_FIELDS[name].default, bool):
            return int(value)
        if isinstance(_FIELDS[name].default, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config field {name!r}: cannot interpret value {value!r}") from exc


def read_config_file(path) -> dict:
    """Parse a flat JSON config file with line/field diagnostics."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config file {path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path}: expected a flat JSON object")
    return raw


def parse_override(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def resolve_train_config(preset: str | None = None, file_values: dict | None = None,
                         overrides: dict | None = None) -> TrainConfig:
    values: dict = {}
    if preset is not None:
        if preset not in TRAIN_PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: {sorted(TRAIN_PRESETS)}")
        values.update(TRAIN_PRESETS[preset])
    for source in (file_values or {}), (overrides or {}):
        for key, val in source.items():
            values[key] = val
    coerced = {k: _coerce(k, v) for k, v in values.items()}
    config = TrainConfig(**coerced)
    config.validate()
    return config
