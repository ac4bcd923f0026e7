"""Multi-level training objective over magnitude, phase, and complex spectra.

The phase term wraps differences onto [0, pi] before the L1 reduction so a
2*pi jump costs nothing. All reductions are means over every element
(batch, frequency, time). Half-integer multiples of 2*pi round half-to-even
inside the wrapping; the set is measure zero, so training is insensitive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor

from .errors import InputError, TrainingError

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class LossWeights:
    """Linear combination weights for magnitude, phase, complex terms."""

    magnitude: float = 1.0
    phase: float = 0.5
    complex: float = 0.1

    def __post_init__(self):
        if min(self.magnitude, self.phase, self.complex) < 0:
            raise InputError("loss weights must be nonnegative")


def anti_wrap(t) -> Tensor:
    """Wrapped absolute value |t - 2*pi*round(t / 2*pi)|, in [0, pi]."""
    t = torch.as_tensor(t)
    return torch.abs(t - _TWO_PI * torch.round(t / _TWO_PI))


def _check_shapes(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def magnitude_loss(target_mag: Tensor, est_mag: Tensor) -> Tensor:
    """Mean absolute error between magnitude planes."""
    _check_shapes(target_mag, est_mag)
    return torch.mean(torch.abs(target_mag - est_mag))


def phase_loss(target_pha: Tensor, est_pha: Tensor) -> Tensor:
    """Mean anti-wrapped absolute phase difference."""
    _check_shapes(target_pha, est_pha)
    return torch.mean(anti_wrap(target_pha - est_pha))


def complex_loss(target_mag: Tensor, target_pha: Tensor,
                 est_mag: Tensor, est_pha: Tensor) -> Tensor:
    """MSE of real parts plus MSE of imaginary parts of m * exp(i p)."""
    _check_shapes(target_mag, est_mag)
    _check_shapes(target_pha, est_pha)
    real_err = target_mag * torch.cos(target_pha) - est_mag * torch.cos(est_pha)
    imag_err = target_mag * torch.sin(target_pha) - est_mag * torch.sin(est_pha)
    return torch.mean(real_err ** 2) + torch.mean(imag_err ** 2)


@dataclass
class LossParts:
    magnitude: Tensor
    phase: Tensor
    complex: Tensor

    def as_floats(self) -> dict[str, float]:
        return {"magnitude": float(torch.as_tensor(self.magnitude).detach()),
                "phase": float(torch.as_tensor(self.phase).detach()),
                "complex": float(torch.as_tensor(self.complex).detach())}


def total_loss(parts: LossParts, weights: LossWeights | None = None) -> Tensor:
    """Weighted sum of the three terms; raises on non-finite parts."""
    weights = weights or LossWeights()
    for name, value in (("magnitude", parts.magnitude), ("phase", parts.phase),
                        ("complex", parts.complex)):
        value = torch.as_tensor(value).detach()
        if not bool(torch.isfinite(value).all()):
            raise TrainingError(f"non-finite {name} loss",
                                loss_parts={name: float(value)})
    return (weights.magnitude * parts.magnitude
            + weights.phase * parts.phase
            + weights.complex * parts.complex)
