"""Optimization loop: Adam with warmup/decay scheduling, checkpointing,
seeded determinism, and SI-SNR validation.

Checkpoints are a single archive holding every trainable section, the
optimizer and RNG state, and an echo of the full config, behind an 8-byte
magic header and a format version. Serialization goes through numpy + pickle
so identical training runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import math
import pickle
import random
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .datasets import (ManifestEntry, load_entry_pair, paired_segment,
                       read_manifest)
from .errors import CheckpointError, ConfigurationError, TrainingError
from .losses import LossWeights, total_loss
from .metrics import si_snr
from .model import BspMpnet, BspMpnetConfig
from .dsp import Waveform

MAGIC = b"BSPMPNET"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    base_lr: float = 5e-4
    warmup_steps: int = 500
    decay_factor: float = 0.98
    decay_interval: int = 1000
    grad_clip: float = 5.0
    seed: int = 0
    segment_seconds: float = 2.0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    steps_per_epoch: Optional[int] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.base_lr <= 0:
            raise ConfigurationError("base_lr must be positive")


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to base_lr, then multiplicative decay every interval."""
    if step < cfg.warmup_steps:
        return cfg.base_lr * (step + 1) / cfg.warmup_steps
    if cfg.decay_interval <= 0:
        return cfg.base_lr
    return cfg.base_lr * cfg.decay_factor ** ((step - cfg.warmup_steps) // cfg.decay_interval)


# ----------------------------------------------------------- checkpoints

def _to_numpy_tree(obj):
    if isinstance(obj, torch.Tensor):
        return {"__tensor__": obj.detach().cpu().numpy()}
    if isinstance(obj, dict):
        return {k: _to_numpy_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        seq = [_to_numpy_tree(v) for v in obj]
        return seq if isinstance(obj, list) else tuple(seq)
    return obj


def _from_numpy_tree(obj):
    if isinstance(obj, dict):
        if set(obj.keys()) == {"__tensor__"}:
            return torch.from_numpy(np.array(obj["__tensor__"]))
        return {k: _from_numpy_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        seq = [_from_numpy_tree(v) for v in obj]
        return seq if isinstance(obj, list) else tuple(seq)
    return obj


def rng_state(data_rng: np.random.Generator) -> dict:
    return {
        "torch": torch.get_rng_state().numpy(),
        "numpy": data_rng.bit_generator.state,
        "python": random.getstate(),
    }


def restore_rng(state: dict, data_rng: np.random.Generator) -> None:
    torch.set_rng_state(torch.from_numpy(np.array(state["torch"])))
    data_rng.bit_generator.state = state["numpy"]
    random.setstate(state["python"])


def save_checkpoint(path: str | Path, model: BspMpnet,
                    optimizer: torch.optim.Optimizer | None = None,
                    train_config: TrainConfig | None = None,
                    step: int = 0, epoch: int = 0,
                    rng: dict | None = None,
                    best_metric: float | None = None) -> None:
    payload = {
        "model_config": model.config.to_dict(),
        "train_config": asdict(train_config) if train_config else None,
        "step": step,
        "epoch": epoch,
        "model": {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()},
        "optimizer": _to_numpy_tree(optimizer.state_dict()) if optimizer else None,
        "rng": rng,
        "best_metric": best_metric,
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(pickle.dumps(payload, protocol=4))


def load_checkpoint(path: str | Path, model: BspMpnet | None = None,
                    optimizer: torch.optim.Optimizer | None = None) -> dict:
    """Read a checkpoint; optionally restore model/optimizer state in place."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic header)")
    version = struct.unpack("<I", raw[len(MAGIC):len(MAGIC) + 4])[0]
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version}, expected {FORMAT_VERSION}")
    try:
        payload = pickle.loads(raw[len(MAGIC) + 4:])
    except Exception as exc:
        raise CheckpointError(f"{path}: corrupt payload: {exc}") from exc

    if model is not None:
        _check_sections(payload, model, path)
        state = {k: torch.from_numpy(np.array(v)) for k, v in payload["model"].items()}
        model.load_state_dict(state)
    if optimizer is not None:
        if payload["optimizer"] is None:
            raise CheckpointError(f"{path}: checkpoint has no optimizer state")
        optimizer.load_state_dict(_from_numpy_tree(payload["optimizer"]))
    return payload


def _check_sections(payload: dict, model: BspMpnet, path) -> None:
    saved_cfg = payload["model_config"]
    current_cfg = model.config.to_dict()
    flag_diffs = [k for k in current_cfg
                  if k.startswith(("use_", "enhance_", "partial_"))
                  and saved_cfg.get(k) != current_cfg[k]]
    saved_keys = set(payload["model"])
    model_keys = set(model.state_dict())
    if flag_diffs or saved_keys != model_keys:
        missing = sorted(model_keys - saved_keys)[:5]
        unexpected = sorted(saved_keys - model_keys)[:5]
        raise CheckpointError(
            f"{path}: checkpoint does not match model: flag mismatches {flag_diffs}, "
            f"missing sections {missing}, unexpected sections {unexpected}")


# -------------------------------------------------------------- training

@dataclass
class TrainResult:
    step_log: list[dict]
    epochs: list[dict]
    best_path: Optional[Path]
    last_path: Optional[Path]
    best_metric: Optional[float]


def _load_corpus(manifest: Sequence[ManifestEntry] | str | Path,
                 sample_rate: int) -> list[tuple[Waveform, Waveform]]:
    entries = read_manifest(manifest) if isinstance(manifest, (str, Path)) else manifest
    if not entries:
        raise TrainingError("manifest is empty")
    return [load_entry_pair(entry, sample_rate) for entry in entries]


def fit(model: BspMpnet, train_manifest, valid_manifest, cfg: TrainConfig,
        out_dir: str | Path, resume_from: str | Path | None = None) -> TrainResult:
    """Train the model, checkpointing the best (by validation SI-SNR) and
    the most recent state after every epoch."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sample_rate = model.config.stft.sample_rate

    torch.manual_seed(cfg.seed)
    random.seed(cfg.seed)
    data_rng = np.random.default_rng(cfg.seed)

    train_pairs = _load_corpus(train_manifest, sample_rate)
    valid_pairs = _load_corpus(valid_manifest, sample_rate)
    steps_per_epoch = cfg.steps_per_epoch or max(
        1, math.ceil(len(train_pairs) / cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch

    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(trainable, lr=cfg.base_lr)

    start_step = 0
    best_metric = None
    if resume_from is not None:
        payload = load_checkpoint(resume_from, model=model, optimizer=optimizer)
        start_step = payload["step"]
        best_metric = payload["best_metric"]
        if payload["rng"] is not None:
            restore_rng(payload["rng"], data_rng)

    step_log: list[dict] = []
    epoch_log: list[dict] = []
    best_path = out / "best.ckpt"
    last_path = out / "last.ckpt"
    model.train()
    try:
        for step in range(start_step, total_steps):
            lr = lr_schedule(step, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr

            batch_ids = data_rng.integers(0, len(train_pairs), size=cfg.batch_size)
            clean_rows, noisy_rows = [], []
            for idx in batch_ids:
                clean, noisy = train_pairs[idx]
                c, n = paired_segment(clean, noisy, cfg.segment_seconds, data_rng)
                clean_rows.append(c)
                noisy_rows.append(n)
            clean_batch = np.stack(clean_rows)
            noisy_batch = np.stack(noisy_rows)

            output = model(noisy_batch)
            targets = model.prepare_targets(clean_batch)
            parts = model.compute_losses(output, targets)
            try:
                loss = total_loss(parts, cfg.loss_weights)
            except TrainingError as exc:
                raise TrainingError(
                    f"non-finite loss at step {step}", step=step,
                    batch_ids=[int(i) for i in batch_ids],
                    loss_parts=parts.as_floats()) from exc

            optimizer.zero_grad()
            loss.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(trainable, cfg.grad_clip)
            optimizer.step()

            record = {"step": step, "lr": lr, "loss_total": float(loss.detach())}
            record.update({f"loss_{k}": v for k, v in parts.as_floats().items()})
            step_log.append(record)

            if (step + 1) % steps_per_epoch == 0:
                epoch = (step + 1) // steps_per_epoch
                metric = _validate(model, valid_pairs)
                state = rng_state(data_rng)
                if best_metric is None or metric > best_metric:
                    best_metric = metric
                    save_checkpoint(best_path, model, optimizer, cfg,
                                    step=step + 1, epoch=epoch, rng=state,
                                    best_metric=best_metric)
                save_checkpoint(last_path, model, optimizer, cfg,
                                step=step + 1, epoch=epoch, rng=state,
                                best_metric=best_metric)
                epoch_log.append({"epoch": epoch, "step": step + 1,
                                  "valid_si_snr": metric,
                                  "train_loss": float(loss.detach())})
    finally:
        _write_step_log(out / "loss_log.csv", step_log)

    return TrainResult(step_log=step_log, epochs=epoch_log,
                       best_path=best_path if best_path.exists() else None,
                       last_path=last_path if last_path.exists() else None,
                       best_metric=best_metric)


def _validate(model: BspMpnet, pairs: list[tuple[Waveform, Waveform]]) -> float:
    scores = []
    for clean, noisy in pairs:
        _, _, enhanced = model.enhance(noisy)
        scores.append(si_snr(clean, enhanced))
    return float(np.mean(scores))


def _write_step_log(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
