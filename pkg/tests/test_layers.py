import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from inttrain.baseline import oracle_matmul
from inttrain.inttensor import AccTensor32, QTensor8, ScaleExp, dequantize, effective_bitwidth, scale_float
from inttrain.layers import (
    LinearLayer,
    ModelSpec,
    backward,
    class_loss_grad,
    forward,
    init_weights,
    mse_loss_grad,
    nearest_scale_exp,
    quantize_input,
)


def q8(data, scale=ScaleExp(), signed=True):
    return QTensor8(np.asarray(data), scale, signed)


def nearest_scale_oracle(target: float) -> ScaleExp:
    best = None
    for s in range(-32, 33):
        for u in range(5):
            for d in range(5):
                e = ScaleExp(s, u, d)
                key = (abs(math.log2(scale_float(e)) - math.log2(target)), u + d)
                if best is None or key[0] < best[0][0] - 1e-12 or (abs(key[0] - best[0][0]) <= 1e-12 and key[1] < best[0][1]):
                    best = (key, e)
    return best[1]


class TestModelSpec:
    def test_shapes(self):
        assert ModelSpec([4, 3, 2]).layer_shapes == [(4, 3), (3, 2)]

    @pytest.mark.parametrize("kwargs", [{"widths": [4]}, {"widths": [4, 0]}, {"widths": [4, 2], "m": 7},
                                        {"widths": [4, 2], "loss": "hinge"}, {"widths": [4, 2], "batch_size": 0}])
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            ModelSpec(**kwargs)


class TestQuantizeInput:
    def test_zero_input(self):
        q = quantize_input(np.zeros(3))
        assert q.data.tolist() == [0, 0, 0] and q.scale == ScaleExp()

    def test_unit_range(self):
        q = quantize_input(np.array([-1.0, 1.0]))
        assert q.data.tolist() == [-127, 127]
        assert q.scale == nearest_scale_oracle(1 / 127)

    @given(st.floats(1e-6, 1e6))
    def test_scale_search_matches_exhaustive(self, target):
        got, want = nearest_scale_exp(target), nearest_scale_oracle(target)
        assert abs(math.log2(scale_float(got)) - math.log2(target)) == pytest.approx(
            abs(math.log2(scale_float(want)) - math.log2(target)), abs=1e-12)

    @given(hnp.arrays(np.int64, st.integers(1, 12), elements=st.integers(-127, 127)),
           st.builds(ScaleExp, st.integers(-20, 5), st.integers(0, 4), st.integers(0, 4)))
    def test_full_range_round_trip(self, data, e):
        data[0] = 127
        q = quantize_input(dequantize(q8(data, e)))
        assert np.array_equal(dequantize(q), dequantize(q8(data, e)))

    def test_unsigned_uses_eight_bits(self):
        q = quantize_input(np.array([0.0, 0.5, 1.0]), signed=False)
        assert q.data.max() == 255 and not q.signed

    def test_non_finite(self):
        with pytest.raises(ValueError):
            quantize_input(np.array([1.0, np.nan]))


class TestInitWeights:
    def test_deterministic(self):
        a, b = init_weights(8, 5, 3), init_weights(8, 5, 3)
        assert np.array_equal(a.data, b.data) and a.scale == b.scale

    def test_bitwidth(self):
        for seed in range(20):
            assert effective_bitwidth(init_weights(16, 16, seed).data) <= 7

    def test_glorot_std(self):
        n, m = 20, 12
        target = math.sqrt(6 / (n + m)) / math.sqrt(3)
        stds = [dequantize(init_weights(n, m, seed)).std() for seed in range(100)]
        assert abs(np.mean(stds) - target) < 0.2 * target


class TestForward:
    def test_zero_weights(self):
        layer = LinearLayer(q8(np.zeros((3, 2), dtype=np.int64)))
        out = forward(layer, q8([[1, 2, 3]]))
        assert out.data.tolist() == [[0, 0]] and not layer.relu_mask.any()

    def test_hand_trace(self):
        layer = LinearLayer(q8([[3]], ScaleExp(1, 0, 0)))
        out = forward(layer, q8([[2]]))
        assert out.data.tolist() == [[6]] and out.scale == ScaleExp(1, 0, 0) and not out.signed

    def test_caches(self):
        layer = LinearLayer(q8([[1, -1]]))
        a = q8([[5]])
        forward(layer, a)
        assert layer.cached_input is a
        assert layer.relu_mask.tolist() == [[True, False]]

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            forward(LinearLayer(q8(np.zeros((3, 2), dtype=np.int64))), q8([[1, 2]]))

    @given(st.data())
    def test_fidelity(self, data):
        b, n, m = (data.draw(st.integers(1, 6)) for _ in range(3))
        a = data.draw(hnp.arrays(np.int64, (b, n), elements=st.integers(-127, 127)))
        w = data.draw(hnp.arrays(np.int64, (n, m), elements=st.integers(-127, 127)))
        ea = data.draw(st.builds(ScaleExp, st.integers(-8, 0), st.integers(0, 2), st.integers(0, 2)))
        relu = data.draw(st.booleans())
        layer = LinearLayer(q8(w, ScaleExp(-7, 1, 0)), relu=relu)
        out = forward(layer, q8(a, ea))
        ref = dequantize(q8(a, ea)) @ dequantize(layer.weights)
        if relu:
            ref = np.maximum(ref, 0)
            assert not out.signed and out.data.min() >= 0
        else:
            assert effective_bitwidth(out.data) <= 7
        assert out.shape == (b, m)
        half = scale_float(out.scale) / 2
        assert np.all(np.abs(dequantize(out) - ref) <= half * (1 + 1e-9))


def wide_backward_oracle(a, w, mask, e32):
    e = [int(v) for v in np.ravel(e32)]
    bw = max(abs(v) for v in e).bit_length() if any(e) else 0
    sr = max(bw - 7, 0)
    e8 = [(1 if v >= 0 else -1) * ((abs(v) + (1 << (sr - 1))) >> sr) if sr else v for v in e]
    e8 = np.array(e8, dtype=np.int64).reshape(e32.shape) * mask
    return oracle_matmul(a.T, e8), oracle_matmul(e8, w.T), sr


class TestBackward:
    def _layer(self, rng, n=3, m=2, b=2):
        w = rng.integers(-127, 128, size=(n, m))
        layer = LinearLayer(q8(w, ScaleExp(-6, 1, 0)))
        a = q8(rng.integers(0, 256, size=(b, n)), ScaleExp(-8, 0, 1), signed=False)
        forward(layer, a)
        return layer, a, w

    def test_zero_error(self):
        layer, _, _ = self._layer(np.random.default_rng(0))
        g, e = backward(layer, AccTensor32(np.zeros((2, 2), dtype=np.int64), ScaleExp()))
        assert not g.data.any() and not e.data.any()

    def test_dead_relu_zeroes_gradient(self):
        layer = LinearLayer(q8(-np.ones((3, 2), dtype=np.int64)))
        forward(layer, q8(np.ones((2, 3), dtype=np.int64), signed=False))
        g, e = backward(layer, AccTensor32(np.full((2, 2), 1000), ScaleExp()))
        assert not g.data.any() and not e.data.any()

    def test_requires_cache(self):
        with pytest.raises(RuntimeError):
            backward(LinearLayer(q8([[1]])), AccTensor32(np.array([[1]]), ScaleExp()))

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_wide_oracle(self, seed):
        rng = np.random.default_rng(seed)
        layer, a, w = self._layer(rng)
        e_scale = ScaleExp(-3, 0, 2)
        e32 = rng.integers(-(2**20), 2**20, size=(2, 2))
        g, e_prev = backward(layer, AccTensor32(e32, e_scale))
        g_ref, e_ref, sr = wide_backward_oracle(a.data.astype(np.int64), w, layer.relu_mask, e32)
        assert np.array_equal(g.data, g_ref)
        assert np.array_equal(e_prev.data, e_ref)
        # exponents replay: e8 scale is e_scale shifted by sr, then summed with the operand
        assert g.scale == e_scale.shifted(sr) + a.scale
        assert e_prev.scale == e_scale.shifted(sr) + layer.weights.scale

    def test_first_layer_skips_input_error(self):
        layer, _, _ = self._layer(np.random.default_rng(1))
        _, e = backward(layer, AccTensor32(np.ones((2, 2), dtype=np.int64), ScaleExp()), input_error=False)
        assert e is None


class TestMseLoss:
    def test_identical(self):
        a = q8([[3, -4]], ScaleExp(-2, 1, 0))
        err, loss = mse_loss_grad(a, a)
        assert not err.data.any() and loss == 0.0

    def test_hand_alignment(self):
        err, loss = mse_loss_grad(q8([10]), q8([4], ScaleExp(1, 0, 0)))
        assert err.data.tolist() == [2] and err.scale == ScaleExp() and loss == 4.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss_grad(q8([1, 2]), q8([1]))

    @given(hnp.arrays(np.int64, 6, elements=st.integers(-127, 127)),
           st.builds(ScaleExp, st.integers(-10, 0), st.integers(0, 3), st.integers(0, 3)),
           hnp.arrays(np.int64, 6, elements=st.integers(-127, 127)),
           st.builds(ScaleExp, st.integers(-10, 0), st.integers(0, 3), st.integers(0, 3)))
    def test_real_difference(self, a, ea, t, et):
        err, _ = mse_loss_grad(q8(a, ea), q8(t, et))
        ref = dequantize(q8(a, ea)) - dequantize(q8(t, et))
        step = scale_float(err.scale)
        assert np.all(np.abs(dequantize(err) - ref) <= 8 * step + 1e-12)


def onehot_rule(logits, labels, clip):
    mag = 1 << max(int(np.abs(logits).max()).bit_length() - 1, 0)
    out = logits.astype(np.int64).copy()
    for i, y in enumerate(labels):
        for j in range(logits.shape[1]):
            d = int(logits[i, j]) - (mag if j == y else 0)
            if clip:
                d = min(d, 0) if j == y else max(d, 0)
            out[i, j] = d
    return out


class TestClassLoss:
    def test_row_at_target_is_zero(self):
        a = q8([[64, 0, 0], [0, 10, 0]])
        err, _, correct = class_loss_grad(a, [0, 1])
        assert err.data[0].tolist() == [0, 0, 0]
        assert correct == 2

    def test_tie_goes_to_lowest_index(self):
        _, _, correct = class_loss_grad(q8([[5, 5, 5]]), [0])
        assert correct == 1
        _, _, correct = class_loss_grad(q8([[5, 5, 5]]), [1])
        assert correct == 0

    @pytest.mark.parametrize("clip", [False, True])
    def test_rule_oracle(self, clip):
        rng = np.random.default_rng(7)
        for _ in range(50):
            logits = rng.integers(-127, 128, size=(5, 4))
            labels = rng.integers(0, 4, size=5)
            err, loss, _ = class_loss_grad(q8(logits, ScaleExp(-3, 0, 1)), labels, clip=clip)
            assert np.array_equal(err.data, onehot_rule(logits, labels, clip))
            assert err.scale == ScaleExp(-3, 0, 1)
            assert loss > 0

    def test_label_range(self):
        with pytest.raises(ValueError):
            class_loss_grad(q8([[1, 2]]), [2])
