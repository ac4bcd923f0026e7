"""Shared helpers for gradient checks and tiny model configs."""

import numpy as np
import pytest
import torch

from bspmpnet.dsp import StftConfig
from bspmpnet.model import BspMpnetConfig, SslConfig


def central_diff_grads(loss_fn, param: torch.nn.Parameter, indices, eps: float = 1e-5):
    """Central finite differences of a scalar loss w.r.t. selected entries."""
    flat = param.data.view(-1)
    grads = []
    with torch.no_grad():
        for idx in indices:
            orig = flat[idx].item()
            flat[idx] = orig + eps
            up = float(loss_fn())
            flat[idx] = orig - eps
            down = float(loss_fn())
            flat[idx] = orig
            grads.append((up - down) / (2 * eps))
    return torch.tensor(grads, dtype=param.dtype)


def max_rel_error(fd: torch.Tensor, ad: torch.Tensor, floor: float = 1e-8) -> float:
    denom = torch.maximum(fd.abs(), ad.abs()) + floor
    return float(((fd - ad).abs() / denom).max())


def sample_indices(rng: np.random.Generator, numel: int, count: int):
    count = min(count, numel)
    return rng.choice(numel, size=count, replace=False)


@pytest.fixture()
def tiny_config():
    """Smallest full model: F=17 spectra, D=32 stand-in, d=16 decoder."""
    return BspMpnetConfig(
        stft=StftConfig(fft_size=32, win_length=32, hop_length=8),
        ssl=SslConfig(standin_layers=2, standin_dim=32, standin_stride=8,
                      standin_heads=2),
        model_dim=16,
        heads=2,
        ffn_expansion=2,
        tfa_time_kernel=3,
        mp2dc_channels=4,
    )


def small_train_config(**overrides):
    """Default 16 kHz spectra with a small decoder, for short utterances."""
    base = dict(
        ssl=SslConfig(standin_layers=2, standin_dim=16, standin_stride=320,
                      standin_heads=2),
        model_dim=16,
        heads=2,
        ffn_expansion=2,
        tfa_time_kernel=3,
        mp2dc_channels=4,
    )
    base.update(overrides)
    return BspMpnetConfig(**base)


@pytest.fixture()
def synth_corpus(tmp_path):
    """Four 0.25 s utterances at 0 dB; returns the manifest path."""
    from bspmpnet.datasets import SynthSpec, synth_dataset
    return synth_dataset(SynthSpec(num_utterances=4, duration=0.25, seed=1),
                         tmp_path / "corpus")
