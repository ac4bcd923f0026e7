"""INI-style run configuration mirroring the model and trainer dataclasses.

The file is flat key-value pairs under [stft], [ssl], [model], [loss] and
[train] sections. Overrides use dotted paths (``section.key=value``) and are
type-checked against the schema; unknown keys are rejected by name.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .dsp import StftConfig
from .errors import ConfigurationError
from .losses import LossWeights
from .model import BspMpnetConfig, SslConfig
from .training import TrainConfig

_OPT_INT = "optional_int"

SCHEMA: dict[str, dict[str, Any]] = {
    "stft": {
        "sample_rate": int, "fft_size": int, "win_length": int,
        "hop_length": int, "window": str, "center": bool,
    },
    "ssl": {
        "backbone": str, "standin_layers": int, "standin_dim": int,
        "standin_stride": int, "standin_heads": int, "standin_seed": int,
        "hidden_dim": _OPT_INT, "mpfs_reduction": int, "pf_unfreeze_top": int,
    },
    "model": {
        "model_dim": int, "heads": int, "ffn_expansion": int,
        "tfa_time_kernel": int, "tfa_reduction": int, "rema_repeats": int,
        "mask_conv_kernel": int, "mp2dc_channels": int, "mp2dc_kernel": int,
        "use_pcs": bool, "use_fs_ssl": bool, "use_mp2dc": bool, "use_rema": bool,
        "use_mask_gate": bool, "enhance_mag": bool, "enhance_pha": bool,
        "partial_finetune": bool, "mask_domain": str, "phase_mode": str,
        "loss_domain": str, "pcs_targets": bool, "band_table": str,
    },
    "loss": {"lambda1": float, "lambda2": float, "lambda3": float},
    "train": {
        "epochs": int, "batch_size": int, "base_lr": float, "warmup_steps": int,
        "decay_factor": float, "decay_interval": int, "grad_clip": float,
        "seed": int, "segment_seconds": float, "steps_per_epoch": _OPT_INT,
    },
}


@dataclass(frozen=True)
class RunConfig:
    model: BspMpnetConfig
    train: TrainConfig


def _parse_value(section: str, key: str, raw: str):
    typ = SCHEMA[section][key]
    raw = raw.strip()
    try:
        if typ is bool:
            lowered = raw.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if typ is _OPT_INT:
            return None if raw.lower() in ("", "none") else int(raw)
        return typ(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{section}.{key}: {exc}") from exc


def _check_key(section: str, key: str) -> None:
    if section not in SCHEMA:
        raise ConfigurationError(f"unknown config section {section!r}")
    if key not in SCHEMA[section]:
        raise ConfigurationError(f"unknown config key {section}.{key}")


def default_mapping() -> dict[str, dict]:
    rc = RunConfig(model=BspMpnetConfig(), train=TrainConfig())
    return mapping_from_run_config(rc)


def mapping_from_run_config(rc: RunConfig) -> dict[str, dict]:
    model = rc.model
    train = rc.train
    mapping: dict[str, dict] = {"stft": {}, "ssl": {}, "model": {}, "loss": {}, "train": {}}
    for key in SCHEMA["stft"]:
        mapping["stft"][key] = getattr(model.stft, key)
    for key in SCHEMA["ssl"]:
        mapping["ssl"][key] = getattr(model.ssl, key)
    for key in SCHEMA["model"]:
        mapping["model"][key] = getattr(model, key)
    mapping["loss"] = {"lambda1": train.loss_weights.magnitude,
                       "lambda2": train.loss_weights.phase,
                       "lambda3": train.loss_weights.complex}
    for key in SCHEMA["train"]:
        if key != "loss_weights":
            mapping["train"][key] = getattr(train, key)
    return mapping


def run_config_from_mapping(mapping: dict[str, dict]) -> RunConfig:
    stft = StftConfig(**mapping.get("stft", {}))
    ssl = SslConfig(**mapping.get("ssl", {}))
    model = BspMpnetConfig(stft=stft, ssl=ssl, **mapping.get("model", {}))
    loss = mapping.get("loss", {})
    weights = LossWeights(magnitude=loss.get("lambda1", 1.0),
                          phase=loss.get("lambda2", 0.5),
                          complex=loss.get("lambda3", 0.1))
    train = TrainConfig(loss_weights=weights, **mapping.get("train", {}))
    return RunConfig(model=model, train=train)


def load_config(path: str | Path | None = None) -> dict[str, dict]:
    """Read an INI file into a typed mapping; defaults fill absent keys."""
    mapping = default_mapping()
    if path is None:
        return mapping
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigurationError(f"cannot read config file {path}")
    for section in parser.sections():
        for key, raw in parser.items(section):
            _check_key(section, key)
            mapping[section][key] = _parse_value(section, key, raw)
    return mapping


def apply_overrides(mapping: dict[str, dict], overrides: list[str]) -> dict[str, dict]:
    """Apply dotted `section.key=value` overrides in place."""
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form section.key=value")
        dotted, raw = item.split("=", 1)
        if "." not in dotted:
            raise ConfigurationError(f"override key {dotted!r} is not of the form section.key")
        section, key = dotted.split(".", 1)
        _check_key(section, key)
        mapping[section][key] = _parse_value(section, key, raw)
    return mapping


def write_config(mapping: dict[str, dict], path: str | Path) -> None:
    parser = configparser.ConfigParser()
    for section, items in mapping.items():
        parser[section] = {}
        for key, value in items.items():
            if value is None:
                parser[section][key] = "none"
            elif isinstance(value, bool):
                parser[section][key] = "true" if value else "false"
            else:
                parser[section][key] = str(value)
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)
