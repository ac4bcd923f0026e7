"""Self-supervised embeddings, split into magnitude- and phase-related paths.

A backbone (real or stand-in) turns a waveform into a stack of per-layer
hidden states. Each path owns a softmax-normalized set of layer weights and
a bottleneck sigmoid gate; both paths share a single backbone forward pass.
Real pretrained backbones plug in through :class:`SslBackbone`; the
:class:`StandInBackbone` is a small randomly initialized transformer so the
test suite runs without downloading model weights.
"""

from __future__ import annotations

import importlib
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .dsp import Waveform
from .errors import ConfigurationError, InputError


class SslBackbone(nn.Module):
    """Contract for waveform-to-layer-stack feature extractors.

    Implementations declare ``layer_count`` (N), ``hidden_dim`` (D) and
    ``frame_stride`` (samples per output frame) and produce, for a B x L
    waveform batch, a B x N x T' x D stack where every layer shares T'.
    """

    @property
    def layer_count(self) -> int:
        raise NotImplementedError

    @property
    def hidden_dim(self) -> int:
        raise NotImplementedError

    @property
    def frame_stride(self) -> int:
        raise NotImplementedError

    def forward(self, wave: Tensor) -> Tensor:
        raise NotImplementedError

    def layer_parameters(self, index: int):
        """Parameters whose gradients feed layer ``index`` of the stack."""
        raise NotImplementedError

    def set_trainability(self, mask: Sequence[bool]) -> None:
        """Freeze or unfreeze each layer of the stack independently."""
        if len(mask) != self.layer_count:
            raise ConfigurationError(
                f"mask length {len(mask)} != layer count {self.layer_count}")
        for i, trainable in enumerate(mask):
            for p in self.layer_parameters(i):
                p.requires_grad_(bool(trainable))

    @property
    def trainability_mask(self) -> list[bool]:
        mask = []
        for i in range(self.layer_count):
            params = list(self.layer_parameters(i))
            mask.append(bool(params) and all(p.requires_grad for p in params))
        return mask


class _TransformerLayer(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_expansion: int):
        super().__init__()
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, ffn_expansion * dim),
            nn.ReLU(),
            nn.Linear(ffn_expansion * dim, dim),
        )
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, x: Tensor) -> Tensor:
        attn_out, _ = self.attn(x, x, x, need_weights=False)
        x = self.norm1(x + attn_out)
        return self.norm2(x + self.ffn(x))


class StandInBackbone(SslBackbone):
    """Small transformer stand-in: conv frontend plus a few attention layers.

    Layer 0 of the stack is the frontend output; layers 1..n are the
    transformer block outputs, so ``layer_count == num_layers + 1``.
    Parameters are drawn from a private generator, making the module
    bit-reproducible for a given seed regardless of global RNG state.
    """

    def __init__(self, num_layers: int = 4, dim: int = 32, stride: int = 320,
                 heads: int = 2, ffn_expansion: int = 2, seed: int = 0):
        super().__init__()
        self._dim = dim
        self._stride = stride
        self.frontend = nn.Conv1d(1, dim, kernel_size=stride, stride=stride)
        self.layers = nn.ModuleList(
            _TransformerLayer(dim, heads, ffn_expansion) for _ in range(num_layers))
        self._reinit(seed)

    def _reinit(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for name, p in sorted(self.named_parameters(), key=lambda kv: kv[0]):
            with torch.no_grad():
                if p.ndim > 1:
                    p.normal_(0.0, 0.05, generator=gen)
                elif name.endswith(".bias") or "bias" in name:
                    p.zero_()
                else:  # layer-norm scales
                    p.fill_(1.0)

    @property
    def layer_count(self) -> int:
        return len(self.layers) + 1

    @property
    def hidden_dim(self) -> int:
        return self._dim

    @property
    def frame_stride(self) -> int:
        return self._stride

    def layer_parameters(self, index: int):
        if index == 0:
            return self.frontend.parameters()
        return self.layers[index - 1].parameters()

    def forward(self, wave: Tensor) -> Tensor:
        x = self.frontend(wave.unsqueeze(1)).transpose(1, 2)  # B x T' x D
        outputs = [x]
        for layer in self.layers:
            x = layer(x)
            outputs.append(x)
        return torch.stack(outputs, dim=1)  # B x N x T' x D


def load_backbone(spec: str, **kwargs) -> SslBackbone:
    """Build a backbone from a name or `module.path:factory` plugin string."""
    if spec == "standin":
        return StandInBackbone(**kwargs)
    if ":" not in spec:
        raise ConfigurationError(
            f"unknown backbone {spec!r}; expected 'standin' or 'module:factory'")
    module_name, attr = spec.split(":", 1)
    try:
        factory = getattr(importlib.import_module(module_name), attr)
    except (ImportError, AttributeError) as exc:
        raise ConfigurationError(f"cannot load backbone plugin {spec!r}: {exc}") from exc
    backbone = factory(**kwargs)
    for prop in ("layer_count", "hidden_dim", "frame_stride"):
        if not hasattr(backbone, prop):
            raise ConfigurationError(f"backbone plugin {spec!r} lacks {prop}")
    return backbone


def pf_mask(backbone: SslBackbone, unfreeze_top: int) -> list[bool]:
    """Partial fine-tuning policy: unfreeze only the top layers of the stack."""
    n = backbone.layer_count
    unfreeze_top = max(0, min(unfreeze_top, n))
    return [i >= n - unfreeze_top for i in range(n)]


def extract_layer_stack(wave: Waveform | Tensor, backbone: SslBackbone) -> Tensor:
    """Run the backbone, returning the B x N x T' x D hidden-state stack."""
    if isinstance(wave, Waveform):
        x = torch.from_numpy(wave.samples).unsqueeze(0)
    else:
        x = wave if wave.ndim == 2 else wave.unsqueeze(0)
    x = x.to(next(backbone.parameters()).dtype)
    if x.shape[-1] < backbone.frame_stride:
        raise InputError(
            f"waveform of {x.shape[-1]} samples is shorter than one frame "
            f"({backbone.frame_stride} samples)")
    return backbone(x)


class LayerWeights(nn.Module):
    """Trainable layer-combination weights kept on the simplex via softmax."""

    def __init__(self, layer_count: int):
        super().__init__()
        self.logits = nn.Parameter(torch.zeros(layer_count))

    @property
    def normalized(self) -> Tensor:
        return torch.softmax(self.logits, dim=0)

    def __len__(self):
        return self.logits.shape[0]


def weighted_sum(stack: Tensor, weights: LayerWeights | Tensor) -> Tensor:
    """Combine a B x N x T' x D stack into a B x D x T' feature map."""
    w = weights.normalized if isinstance(weights, LayerWeights) else weights
    if stack.shape[1] != w.shape[0]:
        raise ConfigurationError(
            f"{w.shape[0]} weights for a stack of {stack.shape[1]} layers")
    return torch.einsum("bntd,n->bdt", stack, w.to(stack.dtype))


class MpfsGate(nn.Module):
    """Per-frame bottleneck gate: sigmoid(W2 relu(W1 x)) applied elementwise."""

    def __init__(self, dim: int, reduction: int = 4):
        super().__init__()
        hidden = max(1, dim // reduction)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, features: Tensor) -> Tensor:
        if features.shape[-2] != self.fc1.in_features:
            raise ConfigurationError(
                f"feature dim {features.shape[-2]} != gate dim {self.fc1.in_features}")
        x = features.transpose(-1, -2)  # B x T x D
        gate = torch.sigmoid(self.fc2(F.relu(self.fc1(x))))
        return (gate * x).transpose(-1, -2)


def mpfs_gate(features: Tensor, gate: MpfsGate) -> Tensor:
    """Apply a fine-grained feature gate to a B x D x T map."""
    return gate(features)


def align_time(features: Tensor, target_frames: int) -> Tensor:
    """Linearly resample the time axis of a B x D x T' map onto T frames."""
    if features.ndim != 3 or features.shape[-1] < 1 or target_frames < 1:
        raise InputError(
            f"cannot align shape {tuple(features.shape)} to {target_frames} frames")
    src = features.shape[-1]
    if src == target_frames:
        return features
    if src == 1:
        return features.expand(*features.shape[:-1], target_frames).contiguous()
    return F.interpolate(features, size=target_frames, mode="linear", align_corners=True)


class FsSslPath(nn.Module):
    """One feature path: weighted layer sum followed by the fine-grained gate."""

    def __init__(self, layer_count: int, hidden_dim: int, reduction: int = 4):
        super().__init__()
        self.layer_weights = LayerWeights(layer_count)
        self.gate = MpfsGate(hidden_dim, reduction)

    def forward(self, stack: Tensor) -> Tensor:
        return self.gate(weighted_sum(stack, self.layer_weights))


class FsSsl(nn.Module):
    """Feature-separated SSL frontend with independent magnitude/phase paths."""

    def __init__(self, backbone: SslBackbone, paths: Sequence[str] = ("mag", "pha"),
                 reduction: int = 4):
        super().__init__()
        self.backbone = backbone
        self.path_names = tuple(paths)
        for name in self.path_names:
            setattr(self, name,
                    FsSslPath(backbone.layer_count, backbone.hidden_dim, reduction))

    def forward(self, wave: Tensor) -> dict[str, Tensor]:
        stack = extract_layer_stack(wave, self.backbone)
        return {name: getattr(self, name)(stack) for name in self.path_names}
