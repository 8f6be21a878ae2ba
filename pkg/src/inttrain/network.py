"""Integer network: a stack of LinearLayers trained end to end in integers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .inttensor import MacCounters, QTensor8, ScaleExp, dequantize
from .layers import (
    LinearLayer,
    ModelSpec,
    backward,
    class_loss_grad,
    forward,
    init_weights,
    mse_loss_grad,
    quantize_input,
)
from .optimizer import UpdateConfig, UpdateReport, update_weights


@dataclass
class StepResult:
    loss: float
    correct: int = 0
    clamped: int = 0
    reports: list[UpdateReport] = field(default_factory=list)


class IntNetwork:
    def __init__(self, spec: ModelSpec, signed_input: bool = True, update: UpdateConfig | None = None):
        self.spec = spec
        self.signed_input = signed_input
        self.update_cfg = update or UpdateConfig(m=spec.m)
        n_layers = len(spec.layer_shapes)
        self.layers = [
            LinearLayer(init_weights(n, m, (spec.seed, i)), relu=(i < n_layers - 1 or spec.final_relu))
            for i, (n, m) in enumerate(spec.layer_shapes)
        ]
        self.fwd_counters = MacCounters()
        self.bwd_counters = MacCounters()

    def quantize(self, x) -> QTensor8:
        return quantize_input(x, signed=self.signed_input)

    def forward(self, a: QTensor8, counters: MacCounters | None = None, cache: bool = True,
                skip_zeros: bool = False) -> QTensor8:
        for layer in self.layers:
            a = forward(layer, a, counters, cache=cache, skip_zeros=skip_zeros)
        return a

    def predict(self, x, counters: MacCounters | None = None) -> np.ndarray:
        return dequantize(self.forward(self.quantize(x), counters, cache=False))

    def train_step(self, x, y) -> StepResult:
        """One forward/backward/update on a real-valued batch.

        ``y`` is the regression target (mse) or integer labels (classification).
        """
        xq = self.quantize(x)
        out = self.forward(xq, self.fwd_counters)
        correct = 0
        if self.spec.loss == "mse":
            target = xq if y is x else quantize_input(y, signed=out.signed)
            err, loss = mse_loss_grad(out, target)
        else:
            err, loss, correct = class_loss_grad(out, y)
        grads = []
        for i in range(len(self.layers) - 1, -1, -1):
            g, err = backward(self.layers[i], err, self.bwd_counters, input_error=i > 0)
            grads.append((i, g))
        result = StepResult(loss=loss, correct=correct)
        for i, g in grads:
            rep = update_weights(self.layers[i], g, self.update_cfg)
            result.clamped += rep.clamped
            result.reports.append(rep)
        return result

    def scales(self) -> list[ScaleExp]:
        return [layer.weights.scale for layer in self.layers]

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"w{i}"] = layer.weights.data
            out[f"e{i}"] = np.array(layer.weights.scale.as_tuple(), dtype=np.int8)
        return out

    def load_state(self, state) -> None:
        for i, layer in enumerate(self.layers):
            data = np.asarray(state[f"w{i}"])
            if data.shape != layer.weights.shape:
                raise ValueError(f"layer {i}: stored shape {data.shape} != {layer.weights.shape}")
            layer.weights = QTensor8(data, ScaleExp(*(int(v) for v in state[f"e{i}"])), signed=True)
            layer.clear_cache()
