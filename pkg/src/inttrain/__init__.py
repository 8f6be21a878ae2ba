"""Integer-only neural network training with compound scale exponents."""

from .inttensor import AccTensor32, MacCounters, QTensor8, ScaleExp, dequantize, int_matmul
from .layers import ModelSpec
from .network import IntNetwork
from .optimizer import UpdateConfig, update_weights

__all__ = [
    "AccTensor32",
    "IntNetwork",
    "MacCounters",
    "ModelSpec",
    "QTensor8",
    "ScaleExp",
    "UpdateConfig",
    "dequantize",
    "int_matmul",
    "update_weights",
]
