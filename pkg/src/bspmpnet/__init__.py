"""Dual-path magnitude/phase speech enhancement with self-supervised
embeddings and perceptual contrast stretching."""

__version__ = "0.1.0"

from .dsp import (BifGains, SpectroPair, StftConfig, Waveform, apply_pcs,
                  compress_magnitude, decompress_magnitude, default_band_table,
                  istft, load_band_table, make_bif_gains, read_wav, stft,
                  unit_band_table, write_wav)
from .errors import (BspMpnetError, CheckpointError, ConfigurationError,
                     InputError, TrainingError)
from .losses import (LossParts, LossWeights, anti_wrap, complex_loss,
                     magnitude_loss, phase_loss, total_loss)
from .model import (BspMpnet, BspMpnetConfig, ModelOutput, SslConfig,
                    reconstruct, section_parameter_count,
                    trainable_parameter_count)
from .training import (TrainConfig, TrainResult, fit, load_checkpoint,
                       lr_schedule, save_checkpoint)

__all__ = [
    "BifGains", "SpectroPair", "StftConfig", "Waveform", "apply_pcs",
    "compress_magnitude", "decompress_magnitude", "default_band_table",
    "istft", "load_band_table", "make_bif_gains", "read_wav", "stft",
    "unit_band_table", "write_wav",
    "BspMpnetError", "CheckpointError", "ConfigurationError", "InputError",
    "TrainingError",
    "LossParts", "LossWeights", "anti_wrap", "complex_loss", "magnitude_loss",
    "phase_loss", "total_loss",
    "BspMpnet", "BspMpnetConfig", "ModelOutput", "SslConfig", "reconstruct",
    "section_parameter_count", "trainable_parameter_count",
    "TrainConfig", "TrainResult", "fit", "load_checkpoint", "lr_schedule",
    "save_checkpoint",
    "__version__",
]
