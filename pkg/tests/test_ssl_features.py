"""Backbone stack extraction, weighted layer sums, gating, alignment."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from bspmpnet.dsp import Waveform
from bspmpnet.errors import ConfigurationError, InputError
from bspmpnet.ssl_features import (FsSsl, LayerWeights, MpfsGate,
                                   StandInBackbone, align_time,
                                   extract_layer_stack, load_backbone, mpfs_gate,
                                   pf_mask, weighted_sum)


def make_dummy_backbone(**kwargs):
    """Factory used by the plugin-loader test."""
    return StandInBackbone(num_layers=1, dim=8, stride=100, **kwargs)


@pytest.fixture()
def backbone():
    return StandInBackbone()


class TestExtractLayerStack:
    def test_two_second_wave_makes_100_frames(self, backbone):
        stack = extract_layer_stack(Waveform(np.zeros(32000)), backbone)
        assert stack.shape == (1, backbone.layer_count, 100, backbone.hidden_dim)

    def test_zero_wave_zero_bias_layer0_is_zero(self, backbone):
        # stand-in initializes all biases to zero
        stack = extract_layer_stack(Waveform(np.zeros(16000)), backbone)
        assert torch.all(stack[:, 0] == 0)

    def test_frozen_backbone_gets_no_gradients(self, backbone):
        backbone.set_trainability([False] * backbone.layer_count)
        weights = LayerWeights(backbone.layer_count)
        stack = extract_layer_stack(torch.randn(2, 3200), backbone)
        weighted_sum(stack, weights).sum().backward()
        for p in backbone.parameters():
            assert p.grad is None or torch.all(p.grad == 0)
        assert weights.logits.grad is not None

    def test_partial_mask_routes_gradients(self, backbone):
        mask = pf_mask(backbone, unfreeze_top=2)
        assert mask == [False, False, False, True, True]
        backbone.set_trainability(mask)
        stack = extract_layer_stack(torch.randn(1, 3200), backbone)
        stack.sum().backward()
        frozen = list(backbone.layer_parameters(1))
        live = list(backbone.layer_parameters(backbone.layer_count - 1))
        assert all(p.grad is None for p in frozen)
        assert any(p.grad is not None and p.grad.abs().sum() > 0 for p in live)

    def test_short_wave_rejected(self, backbone):
        with pytest.raises(InputError):
            extract_layer_stack(Waveform(np.zeros(100)), backbone)


class TestWeightedSum:
    def test_one_hot_selects_layer(self):
        stack = torch.randn(2, 4, 7, 5)
        weights = torch.tensor([0.0, 0.0, 1.0, 0.0])
        out = weighted_sum(stack, weights)
        torch.testing.assert_close(out, stack[:, 2].transpose(1, 2))

    def test_uniform_weights_average_constants(self):
        stack = torch.stack([torch.full((1, 6, 3), 1.0), torch.full((1, 6, 3), 3.0)], dim=1)
        out = weighted_sum(stack, torch.tensor([0.5, 0.5]))
        torch.testing.assert_close(out, torch.full((1, 3, 6), 2.0))

    def test_matches_loop_oracle(self):
        torch.manual_seed(0)
        stack = torch.randn(3, 5, 11, 8)
        weights = LayerWeights(5)
        with torch.no_grad():
            weights.logits.normal_()
        out = weighted_sum(stack, weights)
        w = weights.normalized
        expected = torch.zeros(3, 8, 11)
        for i in range(5):
            expected += w[i] * stack[:, i].transpose(1, 2)
        torch.testing.assert_close(out, expected, rtol=1e-6, atol=1e-6)

    def test_permutation_equivariance(self):
        torch.manual_seed(1)
        stack = torch.randn(1, 6, 4, 3)
        w = torch.softmax(torch.randn(6), dim=0)
        perm = torch.randperm(6)
        torch.testing.assert_close(weighted_sum(stack, w),
                                   weighted_sum(stack[:, perm], w[perm]),
                                   rtol=1e-6, atol=1e-6)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ConfigurationError):
            weighted_sum(torch.randn(1, 4, 3, 2), torch.ones(5))


class TestMpfsGate:
    def test_zero_parameters_halve_features(self):
        gate = MpfsGate(dim=6)
        with torch.no_grad():
            for p in gate.parameters():
                p.zero_()
        x = torch.randn(2, 6, 9)
        torch.testing.assert_close(mpfs_gate(x, gate), 0.5 * x)

    def test_zero_features_stay_zero(self):
        gate = MpfsGate(dim=6)
        out = mpfs_gate(torch.zeros(1, 6, 4), gate)
        assert torch.all(out == 0)

    def test_matches_elementwise_oracle(self):
        torch.manual_seed(2)
        gate = MpfsGate(dim=10, reduction=2)
        x = torch.randn(2, 10, 7)
        out = mpfs_gate(x, gate)
        w1, b1 = gate.fc1.weight, gate.fc1.bias
        w2, b2 = gate.fc2.weight, gate.fc2.bias
        expected = torch.empty_like(x)
        for b in range(2):
            for t in range(7):
                col = x[b, :, t]
                h = torch.relu(w1 @ col + b1)
                g = torch.sigmoid(w2 @ h + b2)
                expected[b, :, t] = g * col
        torch.testing.assert_close(out, expected, rtol=1e-6, atol=1e-6)

    def test_gate_never_amplifies(self):
        torch.manual_seed(3)
        gate = MpfsGate(dim=8)
        x = torch.randn(4, 8, 13)
        out = mpfs_gate(x, gate)
        assert torch.all(out.abs() <= x.abs() + 1e-7)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ConfigurationError):
            mpfs_gate(torch.randn(1, 5, 2), MpfsGate(dim=8))


class TestAlignTime:
    def test_same_length_is_identity(self):
        x = torch.randn(1, 4, 9)
        assert align_time(x, 9) is x

    def test_constant_features_stay_constant(self):
        x = torch.full((1, 3, 5), 2.5)
        out = align_time(x, 11)
        torch.testing.assert_close(out, torch.full((1, 3, 11), 2.5))

    def test_linear_midpoint(self):
        x = torch.tensor([[[0.0, 10.0]]])
        out = align_time(x, 3)
        torch.testing.assert_close(out, torch.tensor([[[0.0, 5.0, 10.0]]]))

    def test_single_frame_broadcasts(self):
        x = torch.randn(1, 4, 1)
        out = align_time(x, 6)
        assert out.shape == (1, 4, 6)
        torch.testing.assert_close(out, x.expand(1, 4, 6))

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            align_time(torch.zeros(1, 4, 0), 3)


class TestLayerWeights:
    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=16))
    def test_softmax_always_on_simplex(self, logits):
        weights = LayerWeights(len(logits))
        with torch.no_grad():
            weights.logits.copy_(torch.tensor(logits))
        w = weights.normalized
        assert torch.all(w >= 0) and torch.all(w <= 1)
        assert abs(float(w.sum()) - 1.0) < 1e-6

    def test_fresh_weights_are_uniform(self):
        w = LayerWeights(5).normalized
        torch.testing.assert_close(w, torch.full((5,), 0.2))


class TestFsSsl:
    def test_shared_backbone_two_paths(self):
        torch.manual_seed(0)
        module = FsSsl(StandInBackbone(num_layers=2, dim=16, stride=160))
        out = module(torch.randn(2, 1600))
        assert set(out) == {"mag", "pha"}
        assert out["mag"].shape == (2, 16, 10)
        assert not torch.equal(out["mag"], out["pha"])

    def test_bit_reproducible_under_fixed_seed(self):
        wave = torch.from_numpy(
            np.random.default_rng(5).standard_normal(3200)).float().unsqueeze(0)
        outputs = []
        for _ in range(2):
            torch.manual_seed(7)
            module = FsSsl(StandInBackbone(num_layers=2, dim=16, stride=160, seed=3))
            outputs.append(module(wave))
        assert torch.equal(outputs[0]["mag"], outputs[1]["mag"])
        assert torch.equal(outputs[0]["pha"], outputs[1]["pha"])


class TestBackbonePlugin:
    def test_standin_by_name(self):
        b = load_backbone("standin", num_layers=1, dim=8, stride=100)
        assert b.layer_count == 2 and b.hidden_dim == 8

    def test_plugin_path(self):
        b = load_backbone("test_ssl_features:make_dummy_backbone")
        assert b.frame_stride == 100

    def test_unknown_name_rejected(self):
        with pytest.raises(ConfigurationError):
            load_backbone("wavlm-large")

    def test_missing_factory_rejected(self):
        with pytest.raises(ConfigurationError):
            load_backbone("test_ssl_features:no_such_factory")
