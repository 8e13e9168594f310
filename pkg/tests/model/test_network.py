"""Unit tests for src/dynsal/model/network.py.

Run with: python -m pytest tests/model/test_network.py -v
"""
from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from dynsal.errors import ConfigurationError, DimensionError
from dynsal.model import (
    ConvLSTMState,
    ModelConfig,
    attention_branch,
    attention_forward,
    attention_layers,
    convlstm_step,
    encode,
    encoder_layers,
    enhance,
    forward_sequence,
    init_params,
    predict_maps,
    receptive_field,
)
from dynsal.model.network import GateMaps, attend_frame
from dynsal.tensor import Tensor, hadamard, total
from dynsal.tensor.gradcheck import gradcheck
from dynsal.tensor.ops import constant


def frames_for(config: ModelConfig, rng, count: int = 3) -> np.ndarray:
    return rng.uniform(size=(count, config.input_size, config.input_size, 3))


# ---------------------------------------------------------------------------
# Encoder and attention
# ---------------------------------------------------------------------------

class TestEncode:
    def test_downsamples_by_eight(self, tiny_config, rng):
        params = init_params(tiny_config)
        X = encode(Tensor(frames_for(tiny_config, rng)[0]), params, tiny_config)
        assert X.shape == (4, 4, 2)
        assert X.data.min() >= 0.0

    def test_non_square_frame(self, tiny_config):
        with pytest.raises(DimensionError):
            encode(Tensor(np.zeros((32, 40, 3))), init_params(tiny_config), tiny_config)

    def test_wrong_channel_count(self, tiny_config):
        with pytest.raises(DimensionError):
            encode(Tensor(np.zeros((32, 32, 1))), init_params(tiny_config), tiny_config)

    def test_side_not_divisible_by_eight(self, tiny_config):
        with pytest.raises(ConfigurationError):
            encode(Tensor(np.zeros((36, 36, 3))), init_params(tiny_config), tiny_config)


class TestAttention:
    def test_coarse_map_is_a_quarter_of_the_features(self, small_config, rng):
        params = init_params(small_config)
        X = Tensor(rng.normal(size=(8, 8, 4)))
        coarse, M = attention_branch(X, params, small_config)
        assert coarse.shape == (2, 2, 1)
        assert M.shape == (8, 8, 1)

    def test_28_by_28_features_give_7_by_7(self, rng):
        config = ModelConfig(input_size=224, encoder_widths=(2, 2, 2), attention_widths=(2, 2), hidden_channels=1)
        coarse, M = attention_branch(Tensor(rng.normal(size=(28, 28, 2))), init_params(config), config)
        assert coarse.shape == (7, 7, 1)
        assert M.shape == (28, 28, 1)

    def test_map_in_unit_interval(self, small_config, rng):
        for seed in range(10):
            params = init_params(small_config, seed=seed)
            M = attention_forward(Tensor(rng.normal(scale=5.0, size=(8, 8, 4))), params, small_config)
            assert 0.0 <= M.data.min() and M.data.max() <= 1.0

    def test_zero_weights_give_one_half(self, small_config, rng):
        params = init_params(small_config)
        for name in params.group("attention."):
            params[name].data[...] = 0.0
        M = attention_forward(Tensor(rng.normal(size=(8, 8, 4))), params, small_config)
        np.testing.assert_allclose(M.data, 0.5, atol=1e-12)

    def test_invariant_to_encoder_channel_permutation(self, small_config, rng):
        params = init_params(small_config, seed=4)
        frame = Tensor(frames_for(small_config, rng, 1)[0])
        _, M = attend_frame(frame, params, small_config)
        last = f"encoder.conv{len(small_config.encoder_widths)}"
        perm = rng.permutation(small_config.feature_channels)
        params[f"{last}.kernel"].data[...] = params[f"{last}.kernel"].data[..., perm]
        params[f"{last}.bias"].data[...] = params[f"{last}.bias"].data[perm]
        params["attention.conv1.kernel"].data[...] = params["attention.conv1.kernel"].data[:, :, perm, :]
        _, permuted = attend_frame(frame, params, small_config)
        np.testing.assert_allclose(permuted.data, M.data, atol=1e-12)

    def test_without_pooling_map_stays_at_feature_resolution(self, small_config, rng):
        config = replace(small_config, attention_pooling=False)
        coarse, M = attention_branch(Tensor(rng.normal(size=(8, 8, 4))), init_params(config), config)
        assert coarse.shape == M.shape == (8, 8, 1)

    def test_indivisible_features_rejected(self, small_config):
        with pytest.raises(ConfigurationError):
            attention_branch(Tensor(np.zeros((6, 6, 4))), init_params(small_config), small_config)

    def test_branch_sees_more_than_encoder(self):
        config = ModelConfig()
        assert receptive_field(encoder_layers(config)) == 54
        assert receptive_field(attention_layers(config)) == 126


class TestEnhance:
    def test_residual_with_zero_attention_is_identity(self, rng):
        X = Tensor(rng.normal(size=(4, 4, 3)))
        out = enhance(X, constant(0.0, (4, 4, 1)))
        assert np.array_equal(out.data, X.data)

    def test_residual_scales_by_one_plus_m(self, rng):
        X = rng.normal(size=(4, 4, 3))
        M = rng.uniform(size=(4, 4, 1))
        np.testing.assert_allclose(enhance(Tensor(X), Tensor(M)).data, X * (1 + M))

    def test_plain_gating(self, rng):
        X = rng.normal(size=(4, 4, 3))
        M = rng.uniform(size=(4, 4, 1))
        np.testing.assert_allclose(enhance(Tensor(X), Tensor(M), residual=False).data, X * M)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            enhance(Tensor(np.zeros((4, 4, 3))), Tensor(np.zeros((2, 2, 1))))


# ---------------------------------------------------------------------------
# ConvLSTM
# ---------------------------------------------------------------------------

def scalar_params(rng):
    tensors, s = {}, {}
    for g in "ifoc":
        for kind in "xh":
            kernel = np.zeros((3, 3, 1, 1))
            kernel[1, 1, 0, 0] = s[f"w{kind}{g}"] = rng.normal()
            tensors[f"lstm.W_{kind}{g}"] = Tensor(kernel)
        s[f"b{g}"] = rng.normal()
        tensors[f"lstm.b_{g}"] = Tensor([s[f"b{g}"]])
        if g != "c":
            s[f"wc{g}"] = rng.normal()
            tensors[f"lstm.W_c{g}"] = Tensor(np.full((1, 1, 1), s[f"wc{g}"]))
    return tensors, s


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def saturated_forget(params):
    """b_f = +20, b_i = -20 with damped input and forget kernels."""
    params["lstm.b_f"].data[...] = 20.0
    params["lstm.b_i"].data[...] = -20.0
    for gate in ("i", "f"):
        params[f"lstm.W_x{gate}"].data[...] *= 0.1
        params[f"lstm.W_h{gate}"].data[...] *= 0.1
        params[f"lstm.W_c{gate}"].data[...] = 0.0
    return params


class TestConvLSTMStep:
    def test_matches_scalar_peephole_lstm(self, rng):
        tensors, s = scalar_params(rng)
        state = ConvLSTMState.zeros(1, 1)
        h_ref = c_ref = 0.0
        for x in rng.normal(size=5):
            h, c = convlstm_step(Tensor(np.full((1, 1, 1), x)), state, tensors)
            state = ConvLSTMState(h, c)
            i = sigmoid(s["wxi"] * x + s["whi"] * h_ref + s["wci"] * c_ref + s["bi"])
            f = sigmoid(s["wxf"] * x + s["whf"] * h_ref + s["wcf"] * c_ref + s["bf"])
            g = math.tanh(s["wxc"] * x + s["whc"] * h_ref + s["bc"])
            c_ref = f * c_ref + i * g
            o = sigmoid(s["wxo"] * x + s["who"] * h_ref + s["wco"] * c_ref + s["bo"])
            h_ref = o * math.tanh(c_ref)
            assert abs(h.item() - h_ref) < 1e-10
            assert abs(c.item() - c_ref) < 1e-10

    def test_gates_are_collected_and_bounded(self, small_config, rng):
        params = init_params(small_config)
        side, ch = small_config.feature_size, small_config.hidden_channels
        gates: list[GateMaps] = []
        state = ConvLSTMState(Tensor(rng.uniform(-1, 1, size=(side, side, ch))), Tensor(rng.normal(size=(side, side, ch))))
        h, _ = convlstm_step(Tensor(rng.normal(size=(side, side, 4))), state, params, gates=gates)
        assert len(gates) == 1
        for gate in (gates[0].input, gates[0].forget, gates[0].output):
            assert gate.data.min() > 0.0 and gate.data.max() < 1.0
        assert np.abs(h.data).max() < 1.0

    def test_saturated_gates_keep_the_cell(self, small_config, rng):
        params = saturated_forget(init_params(small_config, seed=3))
        side, ch = small_config.feature_size, small_config.hidden_channels
        c_prev = Tensor(rng.normal(size=(side, side, ch)))
        state = ConvLSTMState(Tensor(rng.uniform(-1, 1, size=(side, side, ch))), c_prev)
        _, c = convlstm_step(Tensor(rng.normal(size=(side, side, 4))), state, params)
        np.testing.assert_allclose(c.data, c_prev.data, atol=1e-6)

    def test_state_shape_mismatch(self, small_config):
        params = init_params(small_config)
        state = ConvLSTMState.zeros(4, small_config.hidden_channels)
        with pytest.raises(DimensionError):
            convlstm_step(Tensor(np.zeros((8, 8, 4))), state, params)


# ---------------------------------------------------------------------------
# Full sequence
# ---------------------------------------------------------------------------

class TestForwardSequence:
    def test_one_map_per_frame_in_unit_interval(self, tiny_config, rng):
        out = forward_sequence(frames_for(tiny_config, rng, 4), init_params(tiny_config), tiny_config)
        assert len(out.saliency) == len(out.attention) == 4
        maps = out.saliency_maps().data
        assert maps.shape == (4, 4, 4)
        assert maps.min() >= 0.0 and maps.max() <= 1.0

    def test_state_threads_across_calls(self, tiny_config, rng):
        params = init_params(tiny_config, seed=5)
        frames = frames_for(tiny_config, rng, 4)
        whole = forward_sequence(frames, params, tiny_config).saliency_maps().data
        first = forward_sequence(frames[:2], params, tiny_config)
        rest = forward_sequence(frames[2:], params, tiny_config, initial_state=first.state)
        np.testing.assert_allclose(rest.saliency_maps().data, whole[2:], atol=1e-12)

    def test_without_recurrence_frames_are_independent(self, tiny_config, rng):
        config = replace(tiny_config, recurrent=False)
        params = init_params(config)
        frames = frames_for(config, rng, 3)
        out = forward_sequence(frames, params, config)
        assert out.state is None
        alone = forward_sequence(frames[2:], params, config)
        np.testing.assert_array_equal(out.saliency[2].data, alone.saliency[0].data)

    def test_without_attention_map_is_zero(self, tiny_config, rng):
        config = replace(tiny_config, attention=False)
        out = forward_sequence(frames_for(config, rng, 2), init_params(config), config)
        assert all(np.all(m.data == 0.0) for m in out.attention)

    def test_repeated_frame_with_saturated_gates_holds_the_cell(self, tiny_config, rng):
        params = saturated_forget(init_params(tiny_config, seed=6))
        side, ch = tiny_config.feature_size, tiny_config.hidden_channels
        start = ConvLSTMState(Tensor(np.zeros((side, side, ch))), Tensor(rng.normal(size=(side, side, ch))))
        frames = np.repeat(frames_for(tiny_config, rng, 1), 5, axis=0)
        out = forward_sequence(frames, params, tiny_config, initial_state=start)
        np.testing.assert_allclose(out.state.cell.data, start.cell.data, atol=1e-6)

    def test_empty_sequence(self, tiny_config):
        with pytest.raises(DimensionError):
            forward_sequence([], init_params(tiny_config), tiny_config)

    def test_two_frame_gradients(self, tiny_config, rng):
        params = init_params(tiny_config, seed=2)
        for name in ("lstm.W_ci", "lstm.W_cf", "lstm.W_co"):
            params[name].data[...] = rng.normal(scale=0.5, size=params[name].shape)
        frames = frames_for(tiny_config, rng, 2)
        w = Tensor(rng.normal(size=(2, 4, 4)))

        def loss():
            out = forward_sequence(frames, params, tiny_config)
            return total(hadamard(out.saliency_maps(), w))

        checked = params.group("encoder.", "attention.conv", "attention.score.", "lstm.", "readout.")
        results = gradcheck(loss, checked, max_entries=3, floor=1e-4)
        assert {r.name.split(".")[0] for r in results} == {"encoder", "attention", "lstm", "readout"}
        worst = max(results, key=lambda r: r.rel_error)
        assert worst.passed, worst.to_dict()


class TestPredictMaps:
    def test_upsampled_to_frame_resolution(self, tiny_config, rng):
        maps = predict_maps(frames_for(tiny_config, rng, 3), init_params(tiny_config), tiny_config)
        assert len(maps) == 3
        assert all(m.shape == (32, 32) for m in maps)
        assert all(0.0 <= m.min() and m.max() <= 1.0 + 1e-12 for m in maps)

    def test_attention_source(self, small_config, rng):
        maps = predict_maps(frames_for(small_config, rng, 2), init_params(small_config), small_config, source="attention")
        assert maps[0].shape == (64, 64)

    def test_unknown_source(self, tiny_config, rng):
        with pytest.raises(ConfigurationError):
            predict_maps(frames_for(tiny_config, rng, 1), init_params(tiny_config), tiny_config, source="lstm")

    def test_records_no_graph(self, tiny_config, rng):
        params = init_params(tiny_config)
        predict_maps(frames_for(tiny_config, rng, 1), params, tiny_config)
        assert all(np.all(t.grad == 0.0) for t in params.values())
