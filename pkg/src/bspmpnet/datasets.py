"""Corpus manifests, SNR mixing, segmentation, and a synthetic test corpus.

Manifests are JSON-lines, one utterance per line. An entry either points at
a pre-mixed noisy file or at a noise file plus an SNR for on-the-fly mixing.
Condition tags ({noise, reverb, noise+reverb}) make condition splits a
manifest filter rather than code. The synthetic generator writes
deterministic speech-like WAVs so tests run without licensed corpora.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dsp import Waveform, read_wav, write_wav
from .errors import InputError

CONDITIONS = ("noise", "reverb", "noise+reverb")


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    clean: str
    noisy: Optional[str] = None
    noise: Optional[str] = None
    snr: Optional[float] = None
    condition: Optional[str] = None
    duration: float = 0.0

    def __post_init__(self):
        if self.noisy is None and (self.noise is None or self.snr is None):
            raise InputError(
                f"{self.utterance_id}: need either a noisy path or noise path + snr")


def write_manifest(entries: Sequence[ManifestEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            record = {k: v for k, v in asdict(entry).items() if v is not None}
            fh.write(json.dumps(record) + "\n")


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    entries = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            entries.append(ManifestEntry(**json.loads(line)))
        except (json.JSONDecodeError, TypeError) as exc:
            raise InputError(f"{path}:{lineno}: bad manifest line: {exc}") from exc
    return entries


def validate_manifest(entries: Sequence[ManifestEntry], sample_rate: int = 16000) -> None:
    """Check that every referenced file exists, is mono, and matches the rate."""
    for entry in entries:
        for path in (entry.clean, entry.noisy, entry.noise):
            if path is None:
                continue
            if not Path(path).exists():
                raise InputError(f"{entry.utterance_id}: missing file {path}")
            read_wav(path, expected_rate=sample_rate)
        if entry.duration <= 0:
            raise InputError(f"{entry.utterance_id}: nonpositive duration")


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    """Add noise scaled so the clean/noise power ratio equals snr_db.

    Noise shorter than the clean signal is looped; longer noise is cropped
    from the front. An infinite SNR returns the clean signal unchanged.
    """
    if clean.sample_rate != noise.sample_rate:
        raise InputError(
            f"sample-rate mismatch: {clean.sample_rate} vs {noise.sample_rate}")
    if np.isposinf(snr_db):
        return Waveform(clean.samples.copy(), clean.sample_rate)
    c = clean.samples
    n = noise.samples
    clean_power = np.mean(c ** 2)
    if clean_power == 0:
        raise InputError("clean signal is silent; SNR undefined")
    if len(n) < len(c):
        n = np.tile(n, int(np.ceil(len(c) / len(n))))
    n = n[:len(c)]
    noise_power = np.mean(n ** 2)
    if noise_power == 0:
        raise InputError("noise signal is silent; cannot reach requested SNR")
    gain = np.sqrt(clean_power / (noise_power * 10.0 ** (snr_db / 10.0)))
    return Waveform(c + gain * n, clean.sample_rate)


def random_segment(wave: Waveform, seconds: float = 2.0,
                   rng: np.random.Generator | None = None) -> Waveform:
    """Uniformly random fixed-length crop; short inputs get trailing zeros."""
    rng = rng or np.random.default_rng()
    target = int(round(seconds * wave.sample_rate))
    n = len(wave)
    if n == target:
        return wave
    if n < target:
        return Waveform(np.pad(wave.samples, (0, target - n)), wave.sample_rate)
    offset = int(rng.integers(0, n - target + 1))
    return Waveform(wave.samples[offset:offset + target], wave.sample_rate)


def paired_segment(clean: Waveform, noisy: Waveform, seconds: float,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Crop clean and noisy at the same random offset (or pad both)."""
    if len(clean) != len(noisy):
        raise InputError("clean/noisy lengths differ")
    target = int(round(seconds * clean.sample_rate))
    n = len(clean)
    if n <= target:
        pad = (0, target - n)
        return np.pad(clean.samples, pad), np.pad(noisy.samples, pad)
    offset = int(rng.integers(0, n - target + 1))
    return (clean.samples[offset:offset + target],
            noisy.samples[offset:offset + target])


def load_entry_pair(entry: ManifestEntry,
                    sample_rate: int = 16000) -> tuple[Waveform, Waveform]:
    """Resolve an entry to (clean, noisy) waveforms, mixing if needed."""
    clean = read_wav(entry.clean, expected_rate=sample_rate)
    if entry.noisy is not None:
        noisy = read_wav(entry.noisy, expected_rate=sample_rate)
        if len(noisy) != len(clean):
            raise InputError(f"{entry.utterance_id}: clean/noisy lengths differ")
    else:
        noise = read_wav(entry.noise, expected_rate=sample_rate)
        noisy = mix_at_snr(clean, noise, entry.snr)
    return clean, noisy


# ------------------------------------------------------------- synthesis

def speech_like(rng: np.random.Generator, duration: float,
                sample_rate: int = 16000) -> np.ndarray:
    """Harmonic stack with vibrato, a formant-ish envelope, and syllabic AM."""
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(110, 240)
    vibrato = 1.0 + 0.015 * np.sin(2 * np.pi * rng.uniform(4, 7) * t
                                   + rng.uniform(0, 2 * np.pi))
    formant = rng.uniform(500, 900)
    sig = np.zeros(n)
    for k in range(1, 13):
        fk = k * f0
        if fk >= sample_rate / 2:
            break
        amp = (1.0 / k) * (0.4 + np.exp(-0.5 * ((fk - formant) / 800.0) ** 2))
        sig += amp * np.sin(2 * np.pi * fk * vibrato * t + rng.uniform(0, 2 * np.pi))
    am = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(2, 5) * t
                              + rng.uniform(0, 2 * np.pi))
    sig *= am
    return 0.5 * sig / np.max(np.abs(sig))


def noise_like(rng: np.random.Generator, duration: float, kind: str = "white",
               sample_rate: int = 16000) -> np.ndarray:
    n = int(round(duration * sample_rate))
    if kind == "white":
        sig = rng.standard_normal(n)
    elif kind == "babble":
        sig = sum(speech_like(rng, duration, sample_rate) for _ in range(6))
    else:
        raise InputError(f"unknown noise kind {kind!r}")
    return sig / np.max(np.abs(sig))


@dataclass(frozen=True)
class SynthSpec:
    num_utterances: int = 4
    duration: float = 1.0
    sample_rate: int = 16000
    snr_db: tuple[float, ...] = (0.0,)
    noise_kind: str = "white"
    seed: int = 0


def synth_dataset(spec: SynthSpec, out_dir: str | Path) -> Path:
    """Generate a deterministic synthetic corpus; returns the manifest path."""
    out = Path(out_dir)
    (out / "clean").mkdir(parents=True, exist_ok=True)
    (out / "noisy").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    entries = []
    for i in range(spec.num_utterances):
        utt_id = f"synth_{i:04d}"
        clean = Waveform(speech_like(rng, spec.duration, spec.sample_rate),
                         spec.sample_rate)
        noise = Waveform(noise_like(rng, spec.duration, spec.noise_kind,
                                    spec.sample_rate), spec.sample_rate)
        snr = spec.snr_db[i % len(spec.snr_db)]
        noisy = mix_at_snr(clean, noise, snr)
        clean_path = out / "clean" / f"{utt_id}.wav"
        noisy_path = out / "noisy" / f"{utt_id}.wav"
        write_wav(clean_path, clean, fmt="float32")
        write_wav(noisy_path, noisy, fmt="float32")
        entries.append(ManifestEntry(utterance_id=utt_id, clean=str(clean_path),
                                     noisy=str(noisy_path), snr=snr,
                                     condition="noise", duration=spec.duration))
    manifest = out / "manifest.jsonl"
    write_manifest(entries, manifest)
    return manifest


# --------------------------------------------------------- corpus layouts

def scan_paired_dirs(clean_dir: str | Path, noisy_dir: str | Path,
                     condition: str | None = None,
                     sample_rate: int = 16000) -> list[ManifestEntry]:
    """Match WAVs by filename across a clean/noisy directory pair."""
    clean_dir, noisy_dir = Path(clean_dir), Path(noisy_dir)
    entries = []
    for clean_path in sorted(clean_dir.glob("*.wav")):
        noisy_path = noisy_dir / clean_path.name
        if not noisy_path.exists():
            continue
        wave = read_wav(clean_path, expected_rate=sample_rate)
        entries.append(ManifestEntry(utterance_id=clean_path.stem,
                                     clean=str(clean_path), noisy=str(noisy_path),
                                     condition=condition, duration=wave.duration))
    if not entries:
        raise InputError(f"no matched WAV pairs under {clean_dir} / {noisy_dir}")
    return entries


def scan_voicebank(root: str | Path, split: str = "test") -> list[ManifestEntry]:
    """VoiceBank+DEMAND layout: clean_SPLITset_wav / noisy_SPLITset_wav."""
    root = Path(root)
    return scan_paired_dirs(root / f"clean_{split}set_wav",
                            root / f"noisy_{split}set_wav", condition="noise")

_WHAMR_DIRS = {
    "noise": ("s1_anechoic", "mix_single_anechoic"),
    "reverb": ("s1_anechoic", "s1_reverb"),
    "noise+reverb": ("s1_anechoic", "mix_single_reverb"),
}


def scan_whamr(root: str | Path, split: str = "tt",
               condition: str = "noise") -> list[ManifestEntry]:
    """WHAMR!-style layout: <root>/<split>/<condition dirs> with shared names."""
    if condition not in _WHAMR_DIRS:
        raise InputError(f"condition {condition!r} not in {list(_WHAMR_DIRS)}")
    clean_sub, noisy_sub = _WHAMR_DIRS[condition]
    root = Path(root) / split
    return scan_paired_dirs(root / clean_sub, root / noisy_sub, condition=condition)
