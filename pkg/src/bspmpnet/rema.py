"""Mask decoder: attention block, small bidirectional GRU, time-frequency
attention block, and a learnable-slope sigmoid mask gate.

All blocks consume and produce ``B x d x T`` maps (channels first) and use
post-layer normalization with residual connections. No positional encoding
is added; temporal order information comes from the recurrent stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ConfigurationError, InputError


@dataclass(frozen=True)
class RemaConfig:
    """Decoder geometry. ``input_dim`` is the fused-feature width (D + C)."""

    input_dim: int
    output_dim: int
    model_dim: int = 256
    heads: int = 4
    ffn_expansion: int = 4
    tfa_time_kernel: int = 7
    tfa_reduction: int = 4
    repeats: int = 1
    mask_conv_kernel: int = 1

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ConfigurationError(
                f"model_dim {self.model_dim} not divisible by {self.heads} heads")
        if self.model_dim % 2 != 0:
            raise ConfigurationError("model_dim must be even (split across GRU directions)")
        if self.mask_conv_kernel % 2 != 1:
            raise ConfigurationError("mask_conv_kernel must be odd")
        if self.repeats < 1:
            raise ConfigurationError("repeats must be >= 1")


def _ffn(dim: int, expansion: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(dim, expansion * dim),
        nn.ReLU(),
        nn.Linear(expansion * dim, dim),
    )


class SaFnBlock(nn.Module):
    """Multi-head self-attention over time plus a feed-forward sublayer."""

    def __init__(self, dim: int, heads: int, ffn_expansion: int = 4):
        super().__init__()
        if dim % heads != 0:
            raise ConfigurationError(f"dim {dim} not divisible by {heads} heads")
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = _ffn(dim, ffn_expansion)
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, z: Tensor) -> Tensor:
        x = z.transpose(1, 2)
        attn_out, _ = self.attn(x, x, x, need_weights=False)
        x = self.norm1(x + attn_out)
        x = self.norm2(x + self.ffn(x))
        return x.transpose(1, 2)


class SBiGru(nn.Module):
    """Bidirectional GRU whose two half-width directions concatenate to dim."""

    def __init__(self, dim: int):
        super().__init__()
        self.gru = nn.GRU(dim, dim // 2, batch_first=True, bidirectional=True)

    def forward(self, z: Tensor) -> Tensor:
        out, _ = self.gru(z.transpose(1, 2))
        return out.transpose(1, 2)


class TfaModule(nn.Module):
    """Rank-1 attention field: time weights (pooled over frequency) times
    frequency weights (pooled over time), multiplied onto the input."""

    def __init__(self, channels: int, time_kernel: int = 7, reduction: int = 4,
                 time_hidden: int = 8):
        super().__init__()
        pad = time_kernel // 2
        self.ta_conv1 = nn.Conv1d(2, time_hidden, time_kernel, padding=pad)
        self.ta_conv2 = nn.Conv1d(time_hidden, 1, time_kernel, padding=pad)
        hidden = max(1, channels // reduction)
        self.fa_fc1 = nn.Linear(channels, hidden)
        self.fa_fc2 = nn.Linear(hidden, channels)

    def attention_weights(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Return (frequency weights B x F x 1, time weights B x 1 x T)."""
        pooled_t = torch.cat([x.amax(dim=1, keepdim=True),
                              x.mean(dim=1, keepdim=True)], dim=1)  # B x 2 x T
        ta = torch.sigmoid(self.ta_conv2(F.relu(self.ta_conv1(pooled_t))))  # B x 1 x T
        pooled_f = (x.amax(dim=2, keepdim=True)
                    + x.mean(dim=2, keepdim=True)).transpose(1, 2)  # B x 1 x F
        fa = torch.sigmoid(self.fa_fc2(F.relu(self.fa_fc1(pooled_f))))
        return fa.transpose(1, 2), ta

    def forward(self, x: Tensor, return_weights: bool = False):
        fa, ta = self.attention_weights(x)
        out = x * (fa * ta)
        if return_weights:
            return out, fa, ta
        return out


class TfaFnBlock(nn.Module):
    """Time-frequency attention plus feed-forward, mirroring SaFnBlock."""

    def __init__(self, dim: int, time_kernel: int = 7, reduction: int = 4,
                 ffn_expansion: int = 4):
        super().__init__()
        self.tfa = TfaModule(dim, time_kernel, reduction)
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = _ffn(dim, ffn_expansion)
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, z: Tensor) -> Tensor:
        x = (z + self.tfa(z)).transpose(1, 2)
        x = self.norm1(x)
        x = self.norm2(x + self.ffn(x))
        return x.transpose(1, 2)


def lsigmoid(t, alpha, beta: float = 1.0) -> Tensor:
    """Learnable-slope sigmoid beta / (1 + exp(1 - alpha * t)).

    Computed as ``beta * sigmoid(alpha * t - 1)`` so large arguments never
    overflow. A 1-D alpha is treated as per-frequency and broadcast over the
    trailing time axis of an (..., F, T) input.
    """
    t = torch.as_tensor(t)
    alpha = torch.as_tensor(alpha, dtype=t.dtype)
    if alpha.ndim == 1 and t.ndim >= 2 and alpha.shape[0] == t.shape[-2]:
        alpha = alpha.unsqueeze(-1)
    return beta * torch.sigmoid(alpha * t - 1.0)


class MaskGate(nn.Module):
    """ReLU, pointwise 1-D convolution over time, then LSigmoid with
    per-frequency trainable slope (beta fixed at 1)."""

    beta: float = 1.0

    def __init__(self, freq_dim: int, kernel_size: int = 1):
        super().__init__()
        self.conv = nn.Conv1d(freq_dim, freq_dim, kernel_size, padding=kernel_size // 2)
        self.alpha = nn.Parameter(torch.ones(freq_dim))

    def forward(self, z: Tensor) -> Tensor:
        if z.shape[-2] != self.alpha.shape[0]:
            raise ConfigurationError(
                f"channel dim {z.shape[-2]} != gate size {self.alpha.shape[0]}")
        return lsigmoid(self.conv(F.relu(z)), self.alpha, self.beta)


class RemaStage(nn.Module):
    """One attention -> recurrence -> time-frequency attention pass."""

    def __init__(self, cfg: RemaConfig):
        super().__init__()
        self.sa_fn = SaFnBlock(cfg.model_dim, cfg.heads, cfg.ffn_expansion)
        self.gru = SBiGru(cfg.model_dim)
        self.tfa_fn = TfaFnBlock(cfg.model_dim, cfg.tfa_time_kernel,
                                 cfg.tfa_reduction, cfg.ffn_expansion)

    def forward(self, z: Tensor) -> Tensor:
        return self.tfa_fn(self.gru(self.sa_fn(z)))


class RemaDecoder(nn.Module):
    """Fused features in, multiplicative mask in (0, 1) out.

    ``use_core=False`` bypasses the attention/recurrence chain (projections
    and gate remain); ``use_mask_gate=False`` swaps the gate for a plain
    sigmoid. Both switches drop the corresponding parameters entirely.
    """

    def __init__(self, cfg: RemaConfig, use_core: bool = True,
                 use_mask_gate: bool = True):
        super().__init__()
        self.cfg = cfg
        self.input_proj = nn.Linear(cfg.input_dim, cfg.model_dim)
        if use_core:
            self.chain = nn.ModuleList(RemaStage(cfg) for _ in range(cfg.repeats))
        else:
            self.chain = None
        self.output_proj = nn.Linear(cfg.model_dim, cfg.output_dim)
        self.mask_gate = MaskGate(cfg.output_dim, cfg.mask_conv_kernel) if use_mask_gate else None

    def forward(self, z: Tensor) -> Tensor:
        if z.ndim != 3:
            raise InputError(f"expected B x C x T input, got shape {tuple(z.shape)}")
        if z.shape[1] != self.cfg.input_dim:
            raise ConfigurationError(
                f"input channels {z.shape[1]} != configured {self.cfg.input_dim}")
        x = self.input_proj(z.transpose(1, 2)).transpose(1, 2)
        if self.chain is not None:
            for stage in self.chain:
                x = stage(x)
        out = self.output_proj(x.transpose(1, 2)).transpose(1, 2)
        if self.mask_gate is not None:
            return self.mask_gate(out)
        return torch.sigmoid(out)


def sa_fn_block(z: Tensor, block: SaFnBlock) -> Tensor:
    return block(z)


def sbigru(z: Tensor, block: SBiGru) -> Tensor:
    return block(z)


def tfa_module(x: Tensor, module: TfaModule) -> Tensor:
    return module(x)


def tfa_fn_block(z: Tensor, block: TfaFnBlock) -> Tensor:
    return block(z)


def mask_gate(z: Tensor, params: MaskGate) -> Tensor:
    return params(z)


def rema_forward(z_cross: Tensor, decoder: RemaDecoder) -> Tensor:
    return decoder(z_cross)
