"""Assembly of the dual-path enhancement network.

The forward pass boosts the noisy magnitude spectrum, runs the coarse
2-D-conv encoder and the SSL feature paths, fuses them per path, decodes a
multiplicative mask for magnitude and phase separately, and reconstructs a
waveform. Every architectural block can be switched off independently; a
disabled block contributes neither parameters nor compute.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
import torch
from torch import Tensor, nn

from . import dsp
from .dsp import (BifGains, SpectroPair, StftConfig, Waveform, apply_pcs,
                  compress_magnitude, default_band_table, istft, load_band_table,
                  make_bif_gains, stft, unit_band_table)
from .errors import ConfigurationError, InputError
from .losses import LossParts, LossWeights, complex_loss, magnitude_loss, phase_loss
from .mp2dc import Mp2dc
from .rema import RemaConfig, RemaDecoder
from .ssl_features import FsSsl, align_time, load_backbone, pf_mask

_TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class SslConfig:
    """Backbone selection plus the feature-separation hyperparameters."""

    backbone: str = "standin"
    standin_layers: int = 4
    standin_dim: int = 32
    standin_stride: int = 320
    standin_heads: int = 2
    standin_seed: int = 0
    hidden_dim: Optional[int] = None  # override when a plugin declares it
    mpfs_reduction: int = 4
    pf_unfreeze_top: int = 2


@dataclass(frozen=True)
class BspMpnetConfig:
    """Full model hyperparameters and ablation switches."""

    stft: StftConfig = field(default_factory=StftConfig)
    ssl: SslConfig = field(default_factory=SslConfig)
    model_dim: int = 256
    heads: int = 4
    ffn_expansion: int = 4
    tfa_time_kernel: int = 7
    tfa_reduction: int = 4
    rema_repeats: int = 1
    mask_conv_kernel: int = 1
    mp2dc_channels: int = 16
    mp2dc_kernel: int = 3
    use_pcs: bool = True
    use_fs_ssl: bool = True
    use_mp2dc: bool = True
    use_rema: bool = True
    use_mask_gate: bool = True
    enhance_mag: bool = True
    enhance_pha: bool = True
    partial_finetune: bool = True
    mask_domain: str = "boosted"
    phase_mode: str = "mask"
    loss_domain: str = "compressed"
    pcs_targets: bool = True
    band_table: str = "default"

    def __post_init__(self):
        if not (self.enhance_mag or self.enhance_pha):
            raise ConfigurationError("at least one of enhance_mag/enhance_pha must be true")
        if self.mask_domain not in ("boosted", "raw"):
            raise ConfigurationError(f"mask_domain {self.mask_domain!r} not in (boosted, raw)")
        if self.phase_mode not in ("mask", "residual"):
            raise ConfigurationError(f"phase_mode {self.phase_mode!r} not in (mask, residual)")
        if self.loss_domain not in ("compressed", "raw"):
            raise ConfigurationError(
                f"loss_domain {self.loss_domain!r} not in (compressed, raw)")

    @property
    def paths(self) -> tuple[str, ...]:
        return tuple(p for p, on in (("mag", self.enhance_mag),
                                     ("pha", self.enhance_pha)) if on)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "BspMpnetConfig":
        data = dict(data)
        data["stft"] = StftConfig(**data["stft"])
        data["ssl"] = SslConfig(**data["ssl"])
        return cls(**data)


@dataclass
class ModelOutput:
    """Differentiable estimates plus the noisy planes they were masked from."""

    est_mag_compressed: Tensor   # masked plane in the masking domain
    est_pha: Tensor
    est_mag: Tensor              # decompressed magnitude
    noisy_cmag: Tensor
    noisy_boosted: Tensor
    noisy_pha: Tensor
    masks: dict[str, Tensor]


@dataclass
class TargetSpectra:
    cmag: Tensor     # compressed, boosted when pcs_targets is on
    pha: Tensor
    mag_raw: Tensor  # decompressed counterpart of cmag


def resolve_band_table(spec: str, sample_rate: int) -> list:
    if spec == "default":
        return default_band_table()
    if spec == "unit":
        return unit_band_table(sample_rate)
    return load_band_table(spec)


class BspMpnet(nn.Module):
    """Dual-path magnitude/phase masking network."""

    def __init__(self, config: BspMpnetConfig):
        super().__init__()
        self.config = config
        cfg = config
        freq_bins = cfg.stft.num_bins

        if cfg.use_pcs:
            gains = make_bif_gains(cfg.stft,
                                   resolve_band_table(cfg.band_table, cfg.stft.sample_rate))
            self.register_buffer("pcs_gains",
                                 torch.from_numpy(gains.per_bin_gain).float().unsqueeze(-1))
        else:
            self.pcs_gains = None

        if cfg.use_fs_ssl:
            if cfg.ssl.backbone == "standin":
                backbone = load_backbone("standin",
                                         num_layers=cfg.ssl.standin_layers,
                                         dim=cfg.ssl.standin_dim,
                                         stride=cfg.ssl.standin_stride,
                                         heads=cfg.ssl.standin_heads,
                                         seed=cfg.ssl.standin_seed)
            else:
                backbone = load_backbone(cfg.ssl.backbone)
            mask = pf_mask(backbone, cfg.ssl.pf_unfreeze_top) if cfg.partial_finetune \
                else [False] * backbone.layer_count
            backbone.set_trainability(mask)
            self.fs_ssl = FsSsl(backbone, cfg.paths, cfg.ssl.mpfs_reduction)
            self.feature_dim = backbone.hidden_dim
        else:
            self.fs_ssl = None
            self.feature_dim = cfg.ssl.hidden_dim or cfg.ssl.standin_dim

        if cfg.use_mp2dc:
            self.mp2dc = nn.ModuleDict(
                {p: Mp2dc(cfg.mp2dc_channels, cfg.mp2dc_kernel) for p in cfg.paths})
        else:
            self.mp2dc = None

        rema_cfg = RemaConfig(
            input_dim=self.feature_dim + freq_bins,
            output_dim=freq_bins,
            model_dim=cfg.model_dim,
            heads=cfg.heads,
            ffn_expansion=cfg.ffn_expansion,
            tfa_time_kernel=cfg.tfa_time_kernel,
            tfa_reduction=cfg.tfa_reduction,
            repeats=cfg.rema_repeats,
            mask_conv_kernel=cfg.mask_conv_kernel,
        )
        self.rema = nn.ModuleDict(
            {p: RemaDecoder(rema_cfg, use_core=cfg.use_rema,
                            use_mask_gate=cfg.use_mask_gate) for p in cfg.paths})

    # ---------------------------------------------------------------- utils

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    @property
    def device(self) -> torch.device:
        return next(self.parameters()).device

    def _to_model(self, arr: np.ndarray) -> Tensor:
        return torch.from_numpy(arr).to(self.device, self.dtype)

    def _batch_spectra(self, waves: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mags, phases = [], []
        for row in waves:
            spec = stft(Waveform(row, self.config.stft.sample_rate), self.config.stft)
            mags.append(spec.magnitude)
            phases.append(spec.phase)
        return np.stack(mags), np.stack(phases)

    def _boost(self, cmag: Tensor) -> Tensor:
        if self.pcs_gains is None:
            return cmag
        return cmag * self.pcs_gains.to(cmag.dtype)

    # -------------------------------------------------------------- forward

    def _compute_masks(self, waves: Tensor, boosted: Tensor, pha: Tensor) -> dict[str, Tensor]:
        cfg = self.config
        num_frames = boosted.shape[-1]
        ssl_feats = self.fs_ssl(waves) if self.fs_ssl is not None else None
        planes = {"mag": boosted, "pha": pha}
        masks = {}
        for path in cfg.paths:
            plane = planes[path]
            latent = self.mp2dc[path](plane) if self.mp2dc is not None else plane
            if ssl_feats is not None:
                feats = align_time(ssl_feats[path], num_frames)
            else:
                feats = plane.new_zeros(plane.shape[0], self.feature_dim, num_frames)
            masks[path] = self.rema[path](torch.cat([feats, latent], dim=1))
        return masks

    def forward(self, noisy_waves) -> ModelOutput:
        """Run the network on a batch of equal-length waveforms (B x L)."""
        if isinstance(noisy_waves, Tensor):
            waves_np = noisy_waves.detach().cpu().double().numpy()
            waves = noisy_waves.to(self.device, self.dtype)
        else:
            waves_np = np.atleast_2d(np.asarray(noisy_waves, dtype=np.float64))
            waves = self._to_model(waves_np)
        if waves.ndim == 1:
            waves = waves.unsqueeze(0)
            waves_np = waves_np.reshape(1, -1)

        mag_np, pha_np = self._batch_spectra(waves_np)
        mag = self._to_model(mag_np)
        pha = self._to_model(pha_np)
        cmag = torch.log1p(mag)
        boosted = self._boost(cmag)
        masks = self._compute_masks(waves, boosted, pha)

        base = boosted if self.config.mask_domain == "boosted" else cmag
        if self.config.enhance_mag:
            est_cmag = masks["mag"] * base
            est_mag = torch.expm1(est_cmag)
        else:
            est_cmag = base
            est_mag = mag
        if self.config.enhance_pha:
            est_pha = self._enhanced_phase(pha, masks["pha"])
        else:
            est_pha = pha
        return ModelOutput(est_mag_compressed=est_cmag, est_pha=est_pha, est_mag=est_mag,
                           noisy_cmag=cmag, noisy_boosted=boosted, noisy_pha=pha,
                           masks=masks)

    def _enhanced_phase(self, pha: Tensor, mask: Tensor) -> Tensor:
        if self.config.phase_mode == "mask":
            return mask * pha
        # residual mode: wrapped additive correction scaled into (-pi, pi)
        shifted = pha + np.pi * (2.0 * mask - 1.0)
        wrapped = shifted - _TWO_PI * torch.round(shifted / _TWO_PI)
        return torch.where(wrapped <= -np.pi, wrapped + _TWO_PI, wrapped)

    # -------------------------------------------------------------- targets

    def prepare_targets(self, clean_waves) -> TargetSpectra:
        """Spectral training targets in the domains the losses expect."""
        if isinstance(clean_waves, Tensor):
            clean_waves = clean_waves.detach().cpu().double().numpy()
        clean_waves = np.atleast_2d(np.asarray(clean_waves, dtype=np.float64))
        mag_np, pha_np = self._batch_spectra(clean_waves)
        cmag = self._to_model(np.log1p(mag_np))
        if self.config.use_pcs and self.config.pcs_targets:
            cmag = self._boost(cmag)
        return TargetSpectra(cmag=cmag, pha=self._to_model(pha_np),
                             mag_raw=torch.expm1(cmag))

    def compute_losses(self, output: ModelOutput, targets: TargetSpectra) -> LossParts:
        if self.config.loss_domain == "compressed":
            l_mag = magnitude_loss(targets.cmag, output.est_mag_compressed)
        else:
            l_mag = magnitude_loss(targets.mag_raw, output.est_mag)
        l_pha = phase_loss(targets.pha, output.est_pha)
        l_com = complex_loss(targets.mag_raw, targets.pha, output.est_mag, output.est_pha)
        return LossParts(magnitude=l_mag, phase=l_pha, complex=l_com)

    # ------------------------------------------------------------ inference

    @torch.no_grad()
    def enhance(self, wave: Waveform) -> tuple[np.ndarray, np.ndarray, Waveform]:
        """Enhance one utterance; returns (magnitude, phase, waveform).

        Disabled paths pass the corresponding noisy plane through untouched
        (bitwise); the output waveform always has the input's length.
        """
        if wave.sample_rate != self.config.stft.sample_rate:
            raise InputError(
                f"waveform rate {wave.sample_rate} != model rate "
                f"{self.config.stft.sample_rate}")
        was_training = self.training
        self.eval()
        try:
            spec = stft(wave, self.config.stft)
            cmag_np = np.log1p(spec.magnitude)
            if self.pcs_gains is not None:
                gains_np = self.pcs_gains.detach().cpu().double().numpy()
                boosted_np = cmag_np * gains_np
            else:
                boosted_np = cmag_np
            waves = self._to_model(wave.samples.reshape(1, -1))
            masks = self._compute_masks(waves, self._to_model(boosted_np).unsqueeze(0),
                                        self._to_model(spec.phase).unsqueeze(0))
            base_np = boosted_np if self.config.mask_domain == "boosted" else cmag_np

            if self.config.enhance_mag:
                mask_np = masks["mag"][0].detach().cpu().double().numpy()
                est_mag = np.expm1(mask_np * base_np)
            else:
                est_mag = spec.magnitude
            if self.config.enhance_pha:
                mask_np = masks["pha"][0].detach().cpu().double().numpy()
                if self.config.phase_mode == "mask":
                    est_pha = mask_np * spec.phase
                else:
                    shifted = spec.phase + np.pi * (2.0 * mask_np - 1.0)
                    est_pha = shifted - _TWO_PI * np.round(shifted / _TWO_PI)
                    est_pha = np.where(est_pha <= -np.pi, est_pha + _TWO_PI, est_pha)
            else:
                est_pha = spec.phase
            out = istft(SpectroPair(est_mag, est_pha, self.config.stft), len(wave))
            return est_mag, est_pha, out
        finally:
            self.train(was_training)


def reconstruct(mag: np.ndarray, phase: np.ndarray, cfg: StftConfig, length: int) -> Waveform:
    """Waveform synthesis from a magnitude/phase pair."""
    return istft(SpectroPair(mag, phase, cfg), length)


def trainable_parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def section_parameter_count(module: nn.Module, *prefixes: str) -> int:
    """Trainable parameters whose qualified name starts with any prefix."""
    return sum(p.numel() for name, p in module.named_parameters()
               if p.requires_grad and any(name.startswith(pre) for pre in prefixes))
