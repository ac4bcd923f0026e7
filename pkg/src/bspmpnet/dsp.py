"""STFT analysis/synthesis, log-compression, and perceptual band boosting.

Everything here is a pure function of its inputs. Magnitude/phase pairs are
carried around as :class:`SpectroPair` so the STFT geometry travels with the
arrays. The contrast-stretching step multiplies the log-compressed magnitude
spectrum by per-bin gains derived from a perceptual band-importance table;
the packaged default table reproduces the published reference gain curve for
512-point analysis at 16 kHz.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window

from .errors import ConfigurationError, InputError

_WINDOW_NAMES = ("hann", "hamming", "blackman", "rect")


@dataclass(frozen=True)
class Waveform:
    """A mono time-domain signal with its sample rate."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InputError(f"waveform must be 1-D, got shape {samples.shape}")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis geometry. Defaults: 32 ms FFT, 25 ms window, 6.25 ms hop."""

    sample_rate: int = 16000
    fft_size: int = 512
    win_length: int = 400
    hop_length: int = 100
    window: str = "hann"
    center: bool = True

    def __post_init__(self):
        if self.fft_size <= 0 or self.win_length <= 0 or self.hop_length <= 0:
            raise ConfigurationError("fft_size, win_length, hop_length must be positive")
        if self.win_length > self.fft_size:
            raise ConfigurationError(
                f"win_length {self.win_length} exceeds fft_size {self.fft_size}")
        if self.hop_length > self.win_length:
            raise ConfigurationError(
                f"hop_length {self.hop_length} exceeds win_length {self.win_length}")
        if self.window not in _WINDOW_NAMES:
            raise ConfigurationError(f"unknown window {self.window!r}")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def analysis_window(self) -> np.ndarray:
        """Periodic window, zero-padded symmetrically to fft_size."""
        if self.window == "rect":
            w = np.ones(self.win_length)
        else:
            w = get_window(self.window, self.win_length, fftbins=True)
        out = np.zeros(self.fft_size)
        off = (self.fft_size - self.win_length) // 2
        out[off:off + self.win_length] = w
        return out

    def window_sum(self, num_frames: int, power: int = 1) -> np.ndarray:
        """Overlap-added window (or squared window) across shifted copies."""
        w = self.analysis_window() ** power
        out = np.zeros((num_frames - 1) * self.hop_length + self.fft_size)
        for m in range(num_frames):
            out[m * self.hop_length:m * self.hop_length + self.fft_size] += w
        return out


@dataclass(frozen=True)
class SpectroPair:
    """Magnitude (F x T, >= 0) and wrapped phase (F x T) sharing one STFT config."""

    magnitude: np.ndarray
    phase: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        mag = np.asarray(self.magnitude, dtype=np.float64)
        pha = np.asarray(self.phase, dtype=np.float64)
        if mag.shape != pha.shape:
            raise InputError(f"magnitude {mag.shape} and phase {pha.shape} differ")
        if mag.ndim != 2:
            raise InputError(f"expected F x T arrays, got shape {mag.shape}")
        if mag.shape[0] != self.config.num_bins:
            raise InputError(
                f"{mag.shape[0]} rows inconsistent with fft_size {self.config.fft_size}")
        if np.any(mag < 0):
            raise InputError("magnitude must be nonnegative")
        object.__setattr__(self, "magnitude", mag)
        object.__setattr__(self, "phase", pha)

    @property
    def num_frames(self) -> int:
        return self.magnitude.shape[1]


@dataclass(frozen=True)
class BifGains:
    """Per-bin positive gains, piecewise constant over perceptual bands."""

    per_bin_gain: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.per_bin_gain, dtype=np.float64)
        if g.ndim != 1:
            raise ConfigurationError("per_bin_gain must be a vector")
        if np.any(g <= 0):
            raise ConfigurationError("all gains must be positive")
        object.__setattr__(self, "per_bin_gain", g)

    def __len__(self):
        return len(self.per_bin_gain)


def _frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    if cfg.center:
        pad = cfg.fft_size // 2
        xp = np.pad(x, pad, mode="reflect")
        num_frames = len(x) // cfg.hop_length + 1
    else:
        if len(x) < cfg.fft_size:
            raise InputError("signal shorter than fft_size with center=False")
        xp = x
        num_frames = 1 + (len(x) - cfg.fft_size) // cfg.hop_length
    idx = np.arange(cfg.fft_size)[None, :] + cfg.hop_length * np.arange(num_frames)[:, None]
    return xp[idx]


def stft(wave: Waveform, cfg: StftConfig | None = None) -> SpectroPair:
    """Magnitude/phase STFT of a mono waveform.

    With centered framing the frame count is ``len(wave) // hop + 1``; the
    signal is reflect-padded by half the FFT size on both sides so the
    round trip through :func:`istft` is exact up to float error.
    """
    cfg = cfg or StftConfig()
    if wave.sample_rate != cfg.sample_rate:
        raise ConfigurationError(
            f"waveform rate {wave.sample_rate} != config rate {cfg.sample_rate}")
    if len(wave) == 0:
        raise InputError("empty waveform")
    frames = _frame_signal(wave.samples, cfg)
    spec = np.fft.rfft(frames * cfg.analysis_window(), axis=1).T
    return SpectroPair(np.abs(spec), np.angle(spec), cfg)


def istft(spec: SpectroPair, length: int) -> Waveform:
    """Overlap-add synthesis from ``magnitude * exp(i * phase)``.

    Inverse-FFT frames are overlap-added and normalized by the summed
    analysis window, which reconstructs any analyzable signal exactly
    wherever the window coverage is nonzero. The result is truncated or
    zero-padded to ``length`` samples.
    """
    cfg = spec.config
    num_frames = spec.num_frames
    if num_frames == 0:
        raise InputError("spectrogram has no frames")
    pad = cfg.fft_size // 2 if cfg.center else 0
    available = (num_frames - 1) * cfg.hop_length + cfg.fft_size - pad
    if length > available:
        raise InputError(
            f"requested {length} samples but only {available} are synthesizable")
    z = (spec.magnitude * np.exp(1j * spec.phase)).T
    frames = np.fft.irfft(z, n=cfg.fft_size, axis=1)
    out = np.zeros((num_frames - 1) * cfg.hop_length + cfg.fft_size)
    for m in range(num_frames):
        out[m * cfg.hop_length:m * cfg.hop_length + cfg.fft_size] += frames[m]
    wsum = cfg.window_sum(num_frames)
    nonzero = wsum > 1e-10
    out[nonzero] /= wsum[nonzero]
    out = out[pad:pad + length]
    if len(out) < length:
        out = np.pad(out, (0, length - len(out)))
    return Waveform(out, cfg.sample_rate)


def compress_magnitude(mag: np.ndarray) -> np.ndarray:
    """Elementwise log(1 + mag); strictly monotone, maps 0 to 0."""
    mag = np.asarray(mag)
    if np.any(mag < 0):
        raise InputError("magnitude must be nonnegative")
    return np.log1p(mag)


def decompress_magnitude(cmag: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`compress_magnitude`: exp(cmag) - 1."""
    return np.expm1(np.asarray(cmag))


def apply_pcs(cmag: np.ndarray, gains: BifGains) -> np.ndarray:
    """Scale each frequency row of a compressed spectrum by its band gain."""
    cmag = np.asarray(cmag)
    if cmag.shape[0] != len(gains):
        raise ConfigurationError(
            f"gain vector length {len(gains)} != {cmag.shape[0]} frequency rows")
    return cmag * gains.per_bin_gain.reshape((-1,) + (1,) * (cmag.ndim - 1))


BandTable = list[tuple[float, float, float]]


def make_bif_gains(cfg: StftConfig, band_table: BandTable) -> BifGains:
    """Expand a (low_hz, high_hz, gain) band table to per-bin gains.

    Bands must tile [0, Nyquist] without gaps or overlaps. Each bin is
    assigned by its center frequency, lower edge inclusive; the final band
    also includes its upper edge so the Nyquist bin is covered.
    """
    if not band_table:
        raise ConfigurationError("band table is empty")
    table = sorted((float(a), float(b), float(g)) for a, b, g in band_table)
    nyquist = cfg.sample_rate / 2
    tol = 1e-9 * cfg.sample_rate
    if abs(table[0][0]) > tol:
        raise ConfigurationError(f"band table starts at {table[0][0]} Hz, not 0")
    if abs(table[-1][1] - nyquist) > tol:
        raise ConfigurationError(
            f"band table ends at {table[-1][1]} Hz, Nyquist is {nyquist}")
    for (lo_a, hi_a, _), (lo_b, _, _) in zip(table, table[1:]):
        if abs(hi_a - lo_b) > tol:
            raise ConfigurationError(f"band table has a gap or overlap at {hi_a} Hz")
    for lo, hi, gain in table:
        if hi <= lo:
            raise ConfigurationError(f"band ({lo}, {hi}) is empty or inverted")
        if gain <= 0:
            raise ConfigurationError(f"band ({lo}, {hi}) has nonpositive gain {gain}")

    centers = np.arange(cfg.num_bins) * cfg.sample_rate / cfg.fft_size
    gains = np.empty(cfg.num_bins)
    edges = np.array([lo for lo, _, _ in table] + [table[-1][1]])
    idx = np.clip(np.searchsorted(edges, centers, side="right") - 1, 0, len(table) - 1)
    gains[:] = np.array([g for _, _, g in table])[idx]
    return BifGains(gains)


def load_band_table(path: str | Path) -> BandTable:
    """Parse a band table file: one `low_hz high_hz gain` triple per line."""
    table: BandTable = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ConfigurationError(
                f"{path}:{lineno}: expected 'low_hz high_hz gain', got {raw!r}")
        try:
            table.append((float(parts[0]), float(parts[1]), float(parts[2])))
        except ValueError as exc:
            raise ConfigurationError(f"{path}:{lineno}: {exc}") from exc
    if not table:
        raise ConfigurationError(f"{path}: no bands found")
    return table


def default_band_table() -> BandTable:
    """The packaged perceptual band-importance table (16 kHz, gains 1.0-1.4)."""
    ref = resources.files("bspmpnet").joinpath("pcs_bands.txt")
    with resources.as_file(ref) as path:
        return load_band_table(path)


def unit_band_table(sample_rate: int = 16000) -> BandTable:
    """Fallback table: a single unit-gain band covering [0, Nyquist]."""
    return [(0.0, sample_rate / 2, 1.0)]


def read_wav(path: str | Path, expected_rate: int | None = None) -> Waveform:
    """Read a mono 16-bit PCM or 32-bit float WAV file."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise InputError(f"{path}: expected mono audio, got shape {data.shape}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise InputError(f"{path}: unsupported sample format {data.dtype}")
    if expected_rate is not None and rate != expected_rate:
        raise InputError(f"{path}: sample rate {rate}, expected {expected_rate}")
    return Waveform(samples, rate)


def write_wav(path: str | Path, wave: Waveform, fmt: str = "float32") -> None:
    """Write a mono WAV file as 16-bit PCM or 32-bit float."""
    if fmt == "int16":
        clipped = np.clip(wave.samples, -1.0, 32767 / 32768)
        wavfile.write(path, wave.sample_rate, (clipped * 32768.0).round().astype(np.int16))
    elif fmt == "float32":
        wavfile.write(path, wave.sample_rate, wave.samples.astype(np.float32))
    else:
        raise ConfigurationError(f"unsupported WAV format {fmt!r}")
