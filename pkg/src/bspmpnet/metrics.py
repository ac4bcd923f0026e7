"""Objective evaluation: SI-SNR, spectral cosine similarity, real-time
factor, and optional LLR / STOI. Perceptual raters (PESQ, DNSMOS, ...) are
not reimplemented; an external-tool adapter shells out per utterance pair
and merges the parsed scores into the report.
"""

from __future__ import annotations

import json
import re
import shlex
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.linalg import solve_toeplitz, toeplitz
from scipy.signal import get_window, resample_poly

from .dsp import SpectroPair, Waveform
from .errors import InputError

_EPS = 1e-8


def _samples(x) -> np.ndarray:
    if isinstance(x, Waveform):
        return x.samples
    return np.asarray(x, dtype=np.float64)


def si_snr(target, estimate) -> float:
    """Scale-invariant signal-to-noise ratio in dB.

    Both signals are mean-removed; the estimate is projected onto the
    target and the ratio of projection power to residual power is returned.
    """
    t = _samples(target)
    e = _samples(estimate)
    if t.shape != e.shape:
        raise InputError(f"length mismatch: {t.shape} vs {e.shape}")
    t = t - t.mean()
    e = e - e.mean()
    t_power = np.dot(t, t)
    if t_power == 0:
        raise InputError("target signal is all zeros")
    s = (np.dot(e, t) / t_power) * t
    noise = e - s
    with np.errstate(divide="ignore"):
        return float(10.0 * np.log10(np.dot(s, s) / (np.dot(noise, noise) + _EPS)))


def cosine_similarity(clean, enhanced) -> float:
    """Mean per-frame cosine between magnitude-spectrum columns.

    Frames where both vectors vanish count as 1 (identical); frames where
    exactly one vanishes count as 0.
    """
    a = clean.magnitude if isinstance(clean, SpectroPair) else np.asarray(clean)
    b = enhanced.magnitude if isinstance(enhanced, SpectroPair) else np.asarray(enhanced)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    dots = np.sum(a * b, axis=0)
    both_zero = (na == 0) & (nb == 0)
    one_zero = ((na == 0) | (nb == 0)) & ~both_zero
    denom = np.where(na * nb == 0, 1.0, na * nb)
    cos = dots / denom
    cos[both_zero] = 1.0
    cos[one_zero] = 0.0
    return float(np.mean(cos))


def rtf(enhance_fn: Callable[[Waveform], object], test_set: Iterable[Waveform]) -> float:
    """Real-time factor: total processing wall time / total audio duration."""
    total_audio = 0.0
    total_time = 0.0
    count = 0
    for wave in test_set:
        start = time.perf_counter()
        enhance_fn(wave)
        total_time += time.perf_counter() - start
        total_audio += wave.duration
        count += 1
    if count == 0:
        raise InputError("empty test set")
    return total_time / total_audio


# ----------------------------------------------------------------- LLR

def _lpc(r: np.ndarray, order: int) -> np.ndarray:
    """Autocorrelation-method LPC coefficients [1, a1..ap]."""
    coeffs = solve_toeplitz(r[:order], -r[1:order + 1])
    return np.concatenate(([1.0], coeffs))


def llr(clean, enhanced, sample_rate: int = 16000, order: int = 16,
        frame_seconds: float = 0.025) -> float:
    """Log-likelihood ratio between frame-wise LPC models.

    Each 25 ms Hann-windowed frame is fit with an order-16 all-pole model;
    the ratio compares the enhanced model's prediction error on the clean
    autocorrelation against the clean model's own error. Frame values are
    trimmed to the smallest 95% before averaging, per the usual composite-
    measure convention. Degenerate (near-silent) frames are skipped.
    """
    c = _samples(clean)
    e = _samples(enhanced)
    if c.shape != e.shape:
        raise InputError(f"length mismatch: {c.shape} vs {e.shape}")
    frame = int(round(frame_seconds * sample_rate))
    hop = frame // 4
    window = get_window("hann", frame)
    values = []
    for start in range(0, len(c) - frame + 1, hop):
        cf = c[start:start + frame] * window
        ef = e[start:start + frame] * window
        rc = np.correlate(cf, cf, mode="full")[frame - 1:frame + order]
        re_ = np.correlate(ef, ef, mode="full")[frame - 1:frame + order]
        if rc[0] < 1e-12 or re_[0] < 1e-12:
            continue
        try:
            a_c = _lpc(rc, order)
            a_e = _lpc(re_, order)
        except np.linalg.LinAlgError:
            continue
        big_r = toeplitz(rc)
        num = a_e @ big_r @ a_e
        den = a_c @ big_r @ a_c
        if den <= 0 or not np.isfinite(num):
            continue
        values.append(np.log(max(num / den, 1.0)))
    if not values:
        raise InputError("no valid frames for LLR")
    values = np.sort(values)
    kept = values[:max(1, int(round(len(values) * 0.95)))]
    return float(np.mean(kept))


# ----------------------------------------------------------------- STOI

_STOI_RATE = 10000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_FFT = 512
_STOI_BANDS = 15
_STOI_MIN_FREQ = 150.0
_STOI_SEG = 30
_STOI_BETA = -15.0
_STOI_DYN_RANGE = 40.0


def _third_octave_matrix() -> np.ndarray:
    freqs = np.fft.rfftfreq(_STOI_FFT, 1.0 / _STOI_RATE)
    centers = _STOI_MIN_FREQ * 2.0 ** (np.arange(_STOI_BANDS) / 3.0)
    mat = np.zeros((_STOI_BANDS, len(freqs)))
    for k, cf in enumerate(centers):
        lo, hi = cf / 2 ** (1 / 6), cf * 2 ** (1 / 6)
        mat[k] = (freqs >= lo) & (freqs < hi)
    return mat


def _stoi_frames(x: np.ndarray) -> np.ndarray:
    window = get_window("hann", _STOI_FRAME)
    n = (len(x) - _STOI_FRAME) // _STOI_HOP + 1
    idx = np.arange(_STOI_FRAME)[None, :] + _STOI_HOP * np.arange(n)[:, None]
    return x[idx] * window


def stoi(clean, enhanced, sample_rate: int = 16000) -> float:
    """Short-time objective intelligibility (one-third-octave correlation)."""
    c = _samples(clean)
    e = _samples(enhanced)
    if c.shape != e.shape:
        raise InputError(f"length mismatch: {c.shape} vs {e.shape}")
    if sample_rate != _STOI_RATE:
        g = np.gcd(sample_rate, _STOI_RATE)
        c = resample_poly(c, _STOI_RATE // g, sample_rate // g)
        e = resample_poly(e, _STOI_RATE // g, sample_rate // g)
    if len(c) < _STOI_FRAME:
        raise InputError("signal too short for STOI")

    # Drop frames where the clean signal is more than 40 dB below its peak.
    cf = _stoi_frames(c)
    ef = _stoi_frames(e)
    energy = 20 * np.log10(np.linalg.norm(cf, axis=1) + 1e-12)
    keep = energy > energy.max() - _STOI_DYN_RANGE
    cf, ef = cf[keep], ef[keep]
    if len(cf) < _STOI_SEG:
        raise InputError("too few active frames for STOI")

    band = _third_octave_matrix()
    cx = np.sqrt(band @ (np.abs(np.fft.rfft(cf, _STOI_FFT, axis=1)).T ** 2))
    ex = np.sqrt(band @ (np.abs(np.fft.rfft(ef, _STOI_FFT, axis=1)).T ** 2))

    clip_gain = 10 ** (-_STOI_BETA / 20.0)
    scores = []
    for m in range(_STOI_SEG, cx.shape[1] + 1):
        xseg = cx[:, m - _STOI_SEG:m]
        yseg = ex[:, m - _STOI_SEG:m]
        alpha = np.linalg.norm(xseg, axis=1, keepdims=True) / (
            np.linalg.norm(yseg, axis=1, keepdims=True) + 1e-12)
        yclip = np.minimum(alpha * yseg, xseg * (1 + clip_gain))
        xz = xseg - xseg.mean(axis=1, keepdims=True)
        yz = yclip - yclip.mean(axis=1, keepdims=True)
        denom = np.linalg.norm(xz, axis=1) * np.linalg.norm(yz, axis=1) + 1e-12
        scores.extend(np.sum(xz * yz, axis=1) / denom)
    return float(np.mean(scores))


# ------------------------------------------------------------- reporting

@dataclass(frozen=True)
class ExternalTool:
    """Shell command run per (clean, enhanced) pair; parses one float from stdout."""

    name: str
    command: str  # template with {clean} and {enhanced} placeholders

    def run(self, clean_path: str | Path, enhanced_path: str | Path) -> float:
        cmd = self.command.format(clean=shlex.quote(str(clean_path)),
                                  enhanced=shlex.quote(str(enhanced_path)))
        proc = subprocess.run(cmd, shell=True, capture_output=True, text=True)
        if proc.returncode != 0:
            raise InputError(f"tool {self.name!r} failed: {proc.stderr.strip()}")
        floats = re.findall(r"[-+]?\d*\.?\d+(?:[eE][-+]?\d+)?", proc.stdout)
        if not floats:
            raise InputError(f"tool {self.name!r} printed no numeric value")
        return float(floats[-1])


@dataclass
class EvalReport:
    """Per-utterance metric values with arithmetic-mean aggregates."""

    per_utterance: dict[str, dict[str, float]]
    aggregate: dict[str, float] = field(default_factory=dict)
    runtime: dict[str, float] = field(default_factory=dict)

    def metric_names(self) -> list[str]:
        names: list[str] = []
        for values in self.per_utterance.values():
            for k in values:
                if k not in names:
                    names.append(k)
        return names

    def write_csv(self, path: str | Path) -> None:
        names = self.metric_names()
        lines = ["utterance," + ",".join(names)]
        for utt_id, values in self.per_utterance.items():
            lines.append(utt_id + "," + ",".join(
                f"{values[m]:.6f}" if m in values else "" for m in names))
        lines.append("mean," + ",".join(
            f"{self.aggregate[m]:.6f}" if m in self.aggregate else "" for m in names))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def write_json(self, path: str | Path) -> None:
        payload = {"per_utterance": self.per_utterance,
                   "aggregate": self.aggregate,
                   "runtime": self.runtime}
        Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def build_report(per_utterance: dict[str, dict[str, float]],
                 runtime: dict[str, float] | None = None) -> EvalReport:
    if not per_utterance:
        raise InputError("no utterances to report")
    metrics: dict[str, list[float]] = {}
    for values in per_utterance.values():
        for name, value in values.items():
            metrics.setdefault(name, []).append(value)
    aggregate = {name: float(np.mean(vals)) for name, vals in metrics.items()}
    return EvalReport(per_utterance=per_utterance, aggregate=aggregate,
                      runtime=runtime or {})
