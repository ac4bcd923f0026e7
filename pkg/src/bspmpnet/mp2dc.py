"""Coarse 2-D convolutional gating of spectrum planes.

The plane is lifted to a single-channel image, expanded to ``channels``
feature maps, normalized and activated, reduced back to one channel, and
squashed through a sigmoid that multiplicatively gates the original input.
Shape is preserved throughout, so the output is a same-size latent plane
whose entries never exceed the input in magnitude.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .errors import InputError


class Mp2dc(nn.Module):
    """Up-conv / norm / PReLU / down-conv / sigmoid gate over an F x T plane."""

    def __init__(self, channels: int = 16, kernel_size: int = 3):
        super().__init__()
        if kernel_size % 2 != 1:
            raise InputError("kernel_size must be odd to preserve shape")
        pad = kernel_size // 2
        self.up_conv = nn.Conv2d(1, channels, kernel_size, padding=pad)
        self.norm = nn.BatchNorm2d(channels)
        self.act = nn.PReLU(channels)
        self.down_conv = nn.Conv2d(channels, 1, kernel_size, padding=pad)

    def forward(self, plane: Tensor) -> Tensor:
        if plane.ndim != 3:
            raise InputError(f"expected B x F x T input, got shape {tuple(plane.shape)}")
        if min(plane.shape[-2:]) < 1:
            raise InputError("spatial dims must be nonempty")
        x = plane.unsqueeze(1)
        gate = torch.sigmoid(self.down_conv(self.act(self.norm(self.up_conv(x)))))
        return (gate * x).squeeze(1)


def mp2dc_forward(plane: Tensor, params: Mp2dc) -> Tensor:
    """Functional form of the coarse encoder for a B x F x T plane."""
    return params(plane)
