"""Floating-point reference trainer, integer test oracles, training-memory estimate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .layers import ModelSpec


class FpModel:
    """Bias-free dense ReLU network trained with plain SGD (+ optional momentum).

    Update: ``v <- mu*v + g``; ``w <- w - (lr/b) * v`` where ``g`` is the
    batch-summed gradient of the per-sample loss.
    """

    def __init__(self, spec: ModelSpec, lr: float = 0.1, momentum: float = 0.0, weights=None):
        self.spec = spec
        self.lr = lr
        self.momentum = momentum
        if weights is None:
            weights = []
            for i, (n, m) in enumerate(spec.layer_shapes):
                limit = math.sqrt(6.0 / (n + m))
                weights.append(np.random.default_rng((spec.seed, i)).uniform(-limit, limit, size=(n, m)))
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        for w, shape in zip(self.weights, spec.layer_shapes):
            if w.shape != shape:
                raise ValueError(f"weight shape {w.shape} does not match the model shape {shape}")
        self.velocity = [np.zeros_like(w) for w in self.weights]

    def _relu_at(self, i: int) -> bool:
        return i < len(self.weights) - 1 or self.spec.final_relu

    def forward(self, x) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
        a = np.asarray(x, dtype=np.float64)
        inputs, pre = [], []
        for i, w in enumerate(self.weights):
            inputs.append(a)
            z = a @ w
            pre.append(z)
            a = np.maximum(z, 0.0) if self._relu_at(i) else z
        return a, inputs, pre

    def predict(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def loss_and_output_grad(self, out: np.ndarray, y) -> tuple[float, np.ndarray, int]:
        """Per-batch mean loss and d(sum of per-sample losses)/d(out)."""
        b = out.shape[0]
        if self.spec.loss == "mse":
            y = np.asarray(y, dtype=np.float64)
            if y.shape != out.shape:
                raise ValueError(f"target shape {y.shape} does not match output {out.shape}")
            diff = out - y
            return float(np.mean(diff ** 2)), 2.0 * diff / out.shape[1], 0
        labels = np.asarray(y, dtype=np.int64)
        z = out - out.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        loss = float(-np.log(p[np.arange(b), labels] + 1e-300).mean())
        correct = int(np.count_nonzero(out.argmax(axis=1) == labels))
        p[np.arange(b), labels] -= 1.0
        return loss, p, correct

    def gradients(self, x, y) -> tuple[float, list[np.ndarray], int]:
        out, inputs, pre = self.forward(x)
        loss, delta, correct = self.loss_and_output_grad(out, y)
        grads = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            if self._relu_at(i):
                delta = delta * (pre[i] > 0)
            grads[i] = inputs[i].T @ delta
            delta = delta @ self.weights[i].T
        return loss, grads, correct

    def train_step(self, x, y) -> tuple[float, int]:
        loss, grads, correct = self.gradients(x, y)
        b = np.asarray(x).shape[0]
        for w, v, g in zip(self.weights, self.velocity, grads):
            v *= self.momentum
            v += g
            w -= (self.lr / b) * v
        return loss, correct


def fp_train_step(model: FpModel, x, y) -> float:
    return model.train_step(x, y)[0]


@dataclass(frozen=True)
class MemoryEstimate:
    params_bytes: int
    activations_bytes: int
    dynamic_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.params_bytes + self.activations_bytes + self.dynamic_bytes


def estimate_memory(spec: ModelSpec, batch: int, element_bytes: int) -> MemoryEstimate:
    """Training RAM: parameters + cached layer outputs + full-precision scratch.

    Scratch is the largest weight matrix plus the largest batched activation,
    both at 4 bytes (fp32 or int32 accumulators).
    """
    if element_bytes not in (1, 4):
        raise ValueError("element_bytes must be 1 (int8) or 4 (fp32)")
    shapes = spec.layer_shapes
    params = sum(n * m for n, m in shapes) * element_bytes
    acts = sum(batch * m for _, m in shapes) * element_bytes
    dynamic = (max(n * m for n, m in shapes) + max(batch * m for _, m in shapes)) * 4
    return MemoryEstimate(params, acts, dynamic)


def oracle_matmul(a, w) -> np.ndarray:
    """Naive triple loop over Python ints; the reference for int_matmul."""
    a = np.asarray(a)
    w = np.asarray(w)
    if a.shape[1] != w.shape[0]:
        raise ValueError(f"cannot multiply shapes {a.shape} and {w.shape}")
    rows, inner, cols = a.shape[0], a.shape[1], w.shape[1]
    al, wl = a.tolist(), w.tolist()
    out = [[sum(al[i][k] * wl[k][j] for k in range(inner)) for j in range(cols)] for i in range(rows)]
    return np.array(out, dtype=np.int64).reshape(rows, cols)
