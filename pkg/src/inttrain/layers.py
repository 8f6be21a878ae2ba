"""Integer dense layers with ReLU, input quantization and integer loss gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .inttensor import (
    AccTensor32,
    MacCounters,
    QTensor8,
    ScaleExp,
    dequantize,
    effective_bitwidth,
    int_matmul,
    saturate_to_8,
    scale_float,
    shift_and_round,
)
from .rescale import align_with_headroom

LOG2_UP = math.log2(4 / 3)
LOG2_DOWN = math.log2(4 / 5)

# search box for representable input scales
S_RANGE = (-32, 32)
UD_RANGE = (0, 4)


@dataclass
class ModelSpec:
    widths: list[int]
    final_relu: bool = False
    loss: str = "mse"
    m: int = 4
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if len(self.widths) < 2 or any(w <= 0 for w in self.widths):
            raise ValueError(f"widths must list at least two positive sizes, got {self.widths}")
        if not 1 <= self.m <= 6:
            raise ValueError(f"update factor m must be in [1, 6], got {self.m}")
        if self.loss not in ("mse", "classification"):
            raise ValueError(f"unknown loss kind {self.loss!r}")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        return list(zip(self.widths[:-1], self.widths[1:]))


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def nearest_scale_exp(target: float) -> ScaleExp:
    """Representable compound exponent closest to ``target`` in log space."""
    lt = math.log2(target)
    best = None
    for u in range(UD_RANGE[0], UD_RANGE[1] + 1):
        for d in range(UD_RANGE[0], UD_RANGE[1] + 1):
            frac = u * LOG2_UP + d * LOG2_DOWN
            s = min(max(round(lt - frac), S_RANGE[0]), S_RANGE[1])
            key = (abs(s + frac - lt), u + d)
            if best is None or key < best[0]:
                best = (key, ScaleExp(s, u, d))
    return best[1]


def quantize_input(x, signed: bool = True) -> QTensor8:
    """Symmetric 8-bit quantization onto a representable compound scale."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    peak = float(np.abs(x).max()) if x.size else 0.0
    if peak == 0.0:
        return QTensor8(np.zeros(x.shape, dtype=np.int64), ScaleExp(), signed)
    levels = 127 if signed else 255
    e = nearest_scale_exp(peak / levels)
    q = _round_half_away(x / scale_float(e)).astype(np.int64)
    # symmetric: the chosen scale may sit just below peak/levels, and -128
    # would be an 8-bit magnitude
    data = np.clip(q, -levels if signed else 0, levels)
    return QTensor8(data, e, signed)


def init_weights(n: int, m: int, seed) -> QTensor8:
    """Glorot-uniform draw quantized to int8."""
    if n <= 0 or m <= 0:
        raise ValueError("layer dimensions must be positive")
    limit = math.sqrt(6.0 / (n + m))
    rng = np.random.default_rng(seed)
    return quantize_input(rng.uniform(-limit, limit, size=(n, m)), signed=True)


@dataclass
class LinearLayer:
    weights: QTensor8
    relu: bool = True
    cached_input: QTensor8 | None = field(default=None, repr=False)
    relu_mask: np.ndarray | None = field(default=None, repr=False)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    def clear_cache(self) -> None:
        self.cached_input = None
        self.relu_mask = None


def forward(layer: LinearLayer, a_in: QTensor8, counters: MacCounters | None = None,
            cache: bool = True, skip_zeros: bool = False) -> QTensor8:
    """Integer matmul, ReLU in int32, then shift-and-round back to 8 bits.

    ReLU layers emit uint8 (8 magnitude bits); the linear output layer emits
    int8 (7 magnitude bits).
    """
    if a_in.shape[-1] != layer.in_dim:
        raise ValueError(f"input width {a_in.shape[-1]} does not match layer input {layer.in_dim}")
    y = int_matmul(a_in, layer.weights, counters, skip_zeros=skip_zeros)
    data = y.data.astype(np.int64)
    if layer.relu:
        mask = data > 0
        data = np.where(mask, data, 0)
        target_bits = 8
    else:
        mask = np.ones(data.shape, dtype=bool)
        target_bits = 7
    sr = max(effective_bitwidth(data) - target_bits, 0)
    out, _ = saturate_to_8(shift_and_round(data, sr), signed=not layer.relu)
    if cache:
        layer.cached_input = a_in
        layer.relu_mask = mask
    return QTensor8(out, y.scale.shifted(sr), signed=not layer.relu)


def error_to_int8(e32: AccTensor32) -> QTensor8:
    sr = max(effective_bitwidth(e32.data) - 7, 0)
    data, _ = saturate_to_8(shift_and_round(e32.data, sr), signed=True)
    return QTensor8(data, e32.scale.shifted(sr), signed=True)


def backward(layer: LinearLayer, e32_in: AccTensor32, counters: MacCounters | None = None,
             input_error: bool = True) -> tuple[AccTensor32, AccTensor32 | None]:
    """Returns (weight gradient, error for the previous layer).

    The first layer of a network has no use for the input error; pass
    ``input_error=False`` to skip that matmul.
    """
    if layer.cached_input is None or layer.relu_mask is None:
        raise RuntimeError("backward called without a cached forward pass")
    if e32_in.shape != layer.relu_mask.shape:
        raise ValueError(f"error shape {e32_in.shape} does not match output {layer.relu_mask.shape}")
    e8 = error_to_int8(e32_in)
    e8 = QTensor8(np.where(layer.relu_mask, e8.data, 0), e8.scale, signed=True)
    grad = int_matmul(layer.cached_input.T, e8, counters)
    e_prev = int_matmul(e8, layer.weights.T, counters) if input_error else None
    return grad, e_prev


def mse_loss_grad(a_out: QTensor8, target: QTensor8) -> tuple[AccTensor32, float]:
    """Output error ``a_out - target`` on a shared scale, plus the real MSE.

    The 2/b factor of the true MSE gradient is dropped; the weight update
    normalizes gradient magnitude anyway.
    """
    if a_out.shape != target.shape:
        raise ValueError(f"shape mismatch {a_out.shape} vs {target.shape}")
    qa, qt, common = align_with_headroom(a_out.data, a_out.scale, target.data, target.scale)
    err = AccTensor32(qa - qt, common)
    loss = float(np.mean(dequantize(err) ** 2)) if err.data.size else 0.0
    return err, loss


def onehot_targets(a_out: QTensor8, labels) -> np.ndarray:
    magnitude = 1 << max(effective_bitwidth(a_out.data) - 1, 0)
    onehot = np.zeros(a_out.shape, dtype=np.int64)
    onehot[np.arange(len(labels)), labels] = magnitude
    return onehot


def class_loss_grad(a_out: QTensor8, labels, clip: bool = True) -> tuple[AccTensor32, float, int]:
    """Error against a one-hot target sized to the output's own magnitude.

    With ``clip`` the error is one-sided: a label logit at or above its target
    and a non-label logit at or below zero contribute nothing. Without it every
    logit is pulled to its target, which under int8 weight rounding lets the
    many settled samples drown out the misclassified ones.

    Returns (error, cross-entropy of the dequantized logits, number correct).
    Argmax ties resolve to the lowest class index.
    """
    labels = np.asarray(labels, dtype=np.int64)
    c = a_out.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    target = onehot_targets(a_out, labels)
    diff = a_out.data.astype(np.int64) - target
    if clip:
        is_label = np.zeros(diff.shape, dtype=bool)
        is_label[np.arange(len(labels)), labels] = True
        diff = np.where(is_label, np.minimum(diff, 0), np.maximum(diff, 0))
    err = AccTensor32(diff, a_out.scale)
    logits = dequantize(a_out)
    correct = int(np.count_nonzero(np.argmax(logits, axis=1) == labels))
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(len(labels)), labels].mean()) if labels.size else 0.0
    return err, loss, correct
