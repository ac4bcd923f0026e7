"""Metric definitions, the RTF harness, and report plumbing."""

import time

import numpy as np
import pytest

from bspmpnet.dsp import StftConfig, Waveform, stft
from bspmpnet.errors import InputError
from bspmpnet.metrics import (ExternalTool, build_report, cosine_similarity,
                              llr, rtf, si_snr, stoi)


def _tone(freq, seconds=1.0, rate=16000, amp=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return amp * np.sin(2 * np.pi * freq * t)


class TestSiSnr:
    def test_perfect_estimate(self):
        x = _tone(440.0)
        assert si_snr(x, x) >= 60.0

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(8000)
        xhat = x + 0.1 * rng.standard_normal(8000)
        for a in (0.25, 2.0, 17.0):
            assert si_snr(x, a * xhat) == pytest.approx(si_snr(x, xhat), abs=1e-6)

    def test_orthogonal_estimate_strongly_negative(self):
        t = np.arange(16000) / 16000
        target = np.sin(2 * np.pi * 100 * t)
        estimate = np.cos(2 * np.pi * 100 * t)
        assert si_snr(target, estimate) < -40.0

    def test_length_mismatch_rejected(self):
        with pytest.raises(InputError):
            si_snr(np.ones(10), np.ones(11))

    def test_zero_target_rejected(self):
        with pytest.raises(InputError):
            si_snr(np.zeros(10), np.ones(10))


class TestCosineSimilarity:
    def test_identical_spectra(self):
        spec = stft(Waveform(_tone(500.0)), StftConfig())
        assert cosine_similarity(spec, spec) == pytest.approx(1.0)

    def test_orthogonal_frames(self):
        a = np.zeros((4, 3))
        b = np.zeros((4, 3))
        a[0] = 1.0
        b[1] = 1.0
        assert cosine_similarity(a, b) == pytest.approx(0.0)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        mag = rng.uniform(0, 2, size=(257, 9))
        assert cosine_similarity(mag, 2 * mag) == pytest.approx(1.0)

    def test_bounded(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(0, 1, (10, 20))
        b = rng.uniform(0, 1, (10, 20))
        assert -1.0 <= cosine_similarity(a, b) <= 1.0


class TestRtf:
    def test_stub_model_with_known_cost(self):
        def sleepy(wave):
            time.sleep(0.1 * wave.duration)
            return wave

        waves = [Waveform(np.zeros(16000)) for _ in range(3)]
        ratio = rtf(sleepy, waves)
        assert ratio == pytest.approx(0.1, rel=0.2)
        assert ratio > 0

    def test_empty_set_rejected(self):
        with pytest.raises(InputError):
            rtf(lambda w: w, [])

    def test_repeated_runs_stable(self):
        def fixed_cost(wave):
            deadline = time.perf_counter() + 0.02
            while time.perf_counter() < deadline:
                pass
            return wave

        waves = [Waveform(np.zeros(8000)) for _ in range(4)]
        first = rtf(fixed_cost, waves)
        second = rtf(fixed_cost, waves)
        assert abs(first - second) / first < 0.2


class TestLlr:
    def test_identity_is_zero(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(16000)
        assert llr(x, x) == pytest.approx(0.0, abs=1e-12)

    def test_nonnegative(self):
        rng = np.random.default_rng(4)
        clean = _tone(220.0) + 0.05 * rng.standard_normal(16000)
        degraded = clean + 0.3 * rng.standard_normal(16000)
        assert llr(clean, degraded) >= 0.0

    def test_matches_levinson_durbin_oracle(self):
        from scipy.signal import lfilter, get_window
        from scipy.linalg import toeplitz

        rng = np.random.default_rng(5)
        white = rng.standard_normal(16000)
        colored = lfilter([1.0], [1.0, -0.6, 0.2], white)

        def levinson(r, order):
            a = np.zeros(order + 1)
            a[0] = 1.0
            err = r[0]
            for i in range(1, order + 1):
                acc = r[i] + np.dot(a[1:i], r[i - 1:0:-1])
                k = -acc / err
                a_new = a.copy()
                a_new[1:i] = a[1:i] + k * a[i - 1:0:-1]
                a_new[i] = k
                a = a_new
                err *= (1 - k * k)
            return a

        order = 16
        frame = 400
        hop = 100
        window = get_window("hann", frame)
        vals = []
        clean, enh = white, colored
        for start in range(0, len(clean) - frame + 1, hop):
            cf = clean[start:start + frame] * window
            ef = enh[start:start + frame] * window
            rc = np.correlate(cf, cf, "full")[frame - 1:frame + order]
            re_ = np.correlate(ef, ef, "full")[frame - 1:frame + order]
            if rc[0] < 1e-12 or re_[0] < 1e-12:
                continue
            a_c = levinson(rc, order)
            a_e = levinson(re_, order)
            big_r = toeplitz(rc)
            vals.append(np.log(max((a_e @ big_r @ a_e) / (a_c @ big_r @ a_c), 1.0)))
        vals = np.sort(vals)
        expected = float(np.mean(vals[:max(1, int(round(len(vals) * 0.95)))]))
        assert llr(white, colored) == pytest.approx(expected, abs=1e-6)


class TestStoi:
    def test_identity_is_near_one(self):
        rng = np.random.default_rng(6)
        x = _tone(200.0, seconds=2.0) + 0.2 * rng.standard_normal(32000)
        assert stoi(x, x) == pytest.approx(1.0, abs=1e-6)

    def test_more_noise_scores_lower(self):
        rng = np.random.default_rng(7)
        clean = _tone(200.0, seconds=2.0) * (1 + 0.5 * _tone(3.0, seconds=2.0))
        noise = rng.standard_normal(len(clean))
        light = clean + 0.05 * noise
        heavy = clean + 2.0 * noise
        assert stoi(clean, light) > stoi(clean, heavy)


class TestExternalToolAdapter:
    def test_echo_stub(self, tmp_path):
        tool = ExternalTool(name="pesq", command="echo 3.65")
        assert tool.run(tmp_path / "c.wav", tmp_path / "e.wav") == 3.65

    def test_no_float_output_rejected(self):
        tool = ExternalTool(name="bad", command="echo nothing")
        with pytest.raises(InputError):
            tool.run("a", "b")

    def test_failing_command_rejected(self):
        tool = ExternalTool(name="boom", command="false")
        with pytest.raises(InputError):
            tool.run("a", "b")


class TestEvalReport:
    def test_aggregate_is_arithmetic_mean(self):
        per_utt = {f"utt{i}": {"si_snr": float(i), "cosine": 0.5} for i in range(5)}
        report = build_report(per_utt)
        manual = sum(range(5)) / 5
        assert report.aggregate["si_snr"] == pytest.approx(manual, abs=1e-9)
        assert report.aggregate["cosine"] == pytest.approx(0.5, abs=1e-9)

    def test_csv_and_json_outputs(self, tmp_path):
        report = build_report({"a": {"m": 1.0}, "b": {"m": 3.0}})
        report.write_csv(tmp_path / "r.csv")
        report.write_json(tmp_path / "r.json")
        lines = (tmp_path / "r.csv").read_text().strip().splitlines()
        assert lines[0] == "utterance,m"
        assert lines[-1].startswith("mean,2.0")
        import json
        data = json.loads((tmp_path / "r.json").read_text())
        assert data["aggregate"]["m"] == 2.0

    def test_empty_report_rejected(self):
        with pytest.raises(InputError):
            build_report({})
