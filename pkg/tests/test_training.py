"""Schedule anchors, fit smoke runs, checkpoint round trips, determinism."""

import numpy as np
import pytest
import torch
from scipy import stats

from bspmpnet.datasets import SynthSpec, read_manifest, synth_dataset
from bspmpnet.errors import CheckpointError
from bspmpnet.losses import LossWeights
from bspmpnet.model import BspMpnet, trainable_parameter_count
from bspmpnet.training import (TrainConfig, fit, load_checkpoint, lr_schedule,
                               save_checkpoint)
from conftest import small_train_config


def _train_config(**overrides):
    base = dict(epochs=1, batch_size=2, base_lr=1e-3, warmup_steps=0,
                decay_factor=1.0, decay_interval=0, seed=0,
                segment_seconds=0.25)
    base.update(overrides)
    return TrainConfig(**base)


def _model(seed=0, **overrides):
    torch.manual_seed(seed)
    return BspMpnet(small_train_config(**overrides))


class TestLrSchedule:
    CFG = TrainConfig(base_lr=1e-3, warmup_steps=100, decay_factor=0.5,
                      decay_interval=200)

    def test_first_step_is_base_over_warmup(self):
        assert lr_schedule(0, self.CFG) == pytest.approx(1e-3 / 100)

    def test_warmup_end_reaches_base(self):
        assert lr_schedule(self.CFG.warmup_steps, self.CFG) == pytest.approx(1e-3)

    def test_decay_after_interval(self):
        step = self.CFG.warmup_steps + self.CFG.decay_interval
        assert lr_schedule(step, self.CFG) == pytest.approx(1e-3 * 0.5)

    def test_linear_during_warmup(self):
        assert lr_schedule(49, self.CFG) == pytest.approx(1e-3 * 50 / 100)


class TestFit:
    def test_one_epoch_smoke_writes_two_checkpoints(self, synth_corpus, tmp_path):
        model = _model()
        out = tmp_path / "run"
        result = fit(model, synth_corpus, synth_corpus, _train_config(), out)
        assert (out / "best.ckpt").exists()
        assert (out / "last.ckpt").exists()
        assert (out / "loss_log.csv").exists()
        assert len(result.step_log) == 2  # ceil(4 / 2) batches
        assert result.best_metric is not None

    def test_overfit_single_batch_loss_trends_down(self, tmp_path):
        manifest = synth_dataset(SynthSpec(num_utterances=1, duration=0.25, seed=3),
                                 tmp_path / "one")
        model = _model(seed=1)
        cfg = _train_config(epochs=1, batch_size=1, steps_per_epoch=50,
                            base_lr=2e-3)
        result = fit(model, manifest, manifest, cfg, tmp_path / "run")
        losses = [row["loss_total"] for row in result.step_log]
        tau, _ = stats.kendalltau(np.arange(len(losses)), losses)
        assert tau < 0

    def test_layer_weights_stay_on_simplex_after_steps(self, synth_corpus, tmp_path):
        model = _model(seed=2)
        fit(model, synth_corpus, synth_corpus,
            _train_config(epochs=2, steps_per_epoch=5), tmp_path / "run")
        for path in ("mag", "pha"):
            w = getattr(model.fs_ssl, path).layer_weights.normalized
            assert abs(float(w.sum()) - 1.0) < 1e-6
            assert torch.all(w >= 0) and torch.all(w <= 1)

    def test_optimizer_sees_exactly_trainable_parameters(self):
        for overrides in ({}, {"use_fs_ssl": False}, {"partial_finetune": False},
                          {"enhance_pha": False}, {"use_rema": False}):
            model = _model(**overrides)
            trainable = [p for p in model.parameters() if p.requires_grad]
            optimizer = torch.optim.Adam(trainable, lr=1e-3)
            count = sum(p.numel() for g in optimizer.param_groups for p in g["params"])
            assert count == trainable_parameter_count(model)


class TestCheckpoints:
    def test_roundtrip_bitwise(self, tmp_path):
        model = _model(seed=3)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, train_config=_train_config(), step=5)
        clone = _model(seed=99)  # different init, then restored
        payload = load_checkpoint(path, model=clone)
        assert payload["step"] == 5
        for (name, a), (_, b) in zip(model.state_dict().items(),
                                     clone.state_dict().items()):
            assert torch.equal(a, b), name

    def test_magic_header_enforced(self, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)

    def test_mismatched_ablation_flags_rejected(self, tmp_path):
        model = _model(seed=4)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        other = _model(seed=4, use_mp2dc=False)
        with pytest.raises(CheckpointError) as err:
            load_checkpoint(path, model=other)
        assert "use_mp2dc" in str(err.value)

    def test_fixed_seed_runs_are_byte_identical(self, synth_corpus, tmp_path):
        blobs = []
        for name in ("a", "b"):
            model = _model(seed=5)
            fit(model, synth_corpus, synth_corpus,
                _train_config(epochs=10, steps_per_epoch=1),
                tmp_path / name)
            blobs.append((tmp_path / name / "last.ckpt").read_bytes())
        assert blobs[0] == blobs[1]

    def test_resume_reproduces_unbroken_run(self, synth_corpus, tmp_path):
        # unbroken 11-step run
        model_a = _model(seed=6)
        result_a = fit(model_a, synth_corpus, synth_corpus,
                       _train_config(epochs=11, steps_per_epoch=1),
                       tmp_path / "unbroken")
        # 10 steps, then resume for one more
        model_b = _model(seed=6)
        fit(model_b, synth_corpus, synth_corpus,
            _train_config(epochs=10, steps_per_epoch=1), tmp_path / "part1")
        model_c = _model(seed=1234)  # init irrelevant, state is restored
        result_c = fit(model_c, synth_corpus, synth_corpus,
                       _train_config(epochs=11, steps_per_epoch=1),
                       tmp_path / "part2",
                       resume_from=tmp_path / "part1" / "last.ckpt")
        assert len(result_c.step_log) == 1
        loss_a = result_a.step_log[10]["loss_total"]
        loss_c = result_c.step_log[0]["loss_total"]
        assert loss_c == pytest.approx(loss_a, abs=1e-6)
        for (name, a), (_, b) in zip(model_a.state_dict().items(),
                                     model_c.state_dict().items()):
            assert torch.equal(a, b), name
