"""Bit-exact integer tensor primitives.

Tensors carry their real-valued scale as a compound exponent
``2**S * (4/3)**U * (4/5)**D``.  All data-path arithmetic is integer; numpy
``int64`` is used as a wide scratch type and every result that claims to be
32-bit is range-checked.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1
INT8_RANGE = (-128, 127)
UINT8_RANGE = (0, 255)
MAX_INNER_DIM = 1 << 16

UPSCALE = Fraction(4, 3)
DOWNSCALE = Fraction(4, 5)


class ScaleOverflowError(OverflowError):
    """A value or exponent left its fixed-width container."""


@dataclass(frozen=True, order=True)
class ScaleExp:
    """Compound scale exponent (S, U, D); each field is a signed byte."""

    S: int = 0
    U: int = 0
    D: int = 0

    def __post_init__(self):
        for name in ("S", "U", "D"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)):
                raise TypeError(f"{name} must be an integer, got {type(v).__name__}")
            if not -128 <= v <= 127:
                raise ScaleOverflowError(f"exponent {name}={v} outside int8 range")
            object.__setattr__(self, name, int(v))

    def __add__(self, other: ScaleExp) -> ScaleExp:
        return ScaleExp(self.S + other.S, self.U + other.U, self.D + other.D)

    def __sub__(self, other: ScaleExp) -> ScaleExp:
        return ScaleExp(self.S - other.S, self.U - other.U, self.D - other.D)

    def shifted(self, k: int) -> ScaleExp:
        return ScaleExp(self.S + k, self.U, self.D)

    def value(self) -> Fraction:
        return scale_value(self)

    def to_bytes(self) -> bytes:
        return struct.pack("bbb", self.S, self.U, self.D)

    @classmethod
    def from_bytes(cls, raw: bytes) -> ScaleExp:
        return cls(*struct.unpack("bbb", raw))

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.S, self.U, self.D)


def scale_value(e: ScaleExp) -> Fraction:
    """Exact rational value of a compound scale exponent."""
    return Fraction(2) ** e.S * UPSCALE ** e.U * DOWNSCALE ** e.D


def scale_float(e: ScaleExp) -> float:
    """Real-valued view of the scale, for metrics and logging only."""
    return float(scale_value(e))


@dataclass
class MacCounters:
    total_macs: int = 0
    skipped_macs: int = 0

    def add(self, other: MacCounters) -> None:
        self.total_macs += other.total_macs
        self.skipped_macs += other.skipped_macs

    @property
    def skipped_fraction(self) -> float:
        return self.skipped_macs / self.total_macs if self.total_macs else 0.0


@dataclass
class QTensor8:
    """8-bit integer tensor with an attached scale exponent."""

    data: np.ndarray
    scale: ScaleExp = field(default_factory=ScaleExp)
    signed: bool = True

    def __post_init__(self):
        lo, hi = INT8_RANGE if self.signed else UINT8_RANGE
        arr = np.asarray(self.data)
        if arr.size and (arr.min() < lo or arr.max() > hi):
            kind = "int8" if self.signed else "uint8"
            raise ValueError(f"data outside {kind} range [{lo}, {hi}]")
        self.data = arr.astype(np.int8 if self.signed else np.uint8)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def T(self) -> QTensor8:
        return QTensor8(self.data.T, self.scale, self.signed)

    def widen(self) -> AccTensor32:
        return AccTensor32(self.data.astype(np.int32), self.scale)


@dataclass
class AccTensor32:
    """32-bit signed accumulator tensor with an attached scale exponent."""

    data: np.ndarray
    scale: ScaleExp = field(default_factory=ScaleExp)

    def __post_init__(self):
        self.data = to_int32(self.data)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


def to_int32(values) -> np.ndarray:
    """Convert to int32, raising instead of wrapping on overflow."""
    arr = np.asarray(values)
    if arr.dtype.kind not in "iub":
        raise TypeError(f"integer data required, got dtype {arr.dtype}")
    if arr.size and (arr.min() < INT32_MIN or arr.max() > INT32_MAX):
        raise ScaleOverflowError("value does not fit in 32 bits")
    return arr.astype(np.int32)


def effective_bitwidth(values) -> int:
    """Bit length of the largest magnitude; 0 for an all-zero tensor."""
    arr = np.asarray(values)
    if arr.size == 0:
        return 0
    return int(np.abs(arr.astype(np.int64)).max()).bit_length()


def shift_and_round(values, k: int) -> np.ndarray:
    """Divide by ``2**k`` rounding half away from zero (k > 0), or multiply
    by ``2**-k`` exactly (k < 0).  Returns int64 data within int32 range."""
    v = np.asarray(values).astype(np.int64)
    k = int(k)
    if k == 0:
        return v.copy()
    if k > 0:
        if k > 40:
            return np.zeros_like(v)
        mag = (np.abs(v) + (1 << (k - 1))) >> k
        return np.where(v < 0, -mag, mag)
    k = -k
    if v.size == 0 or not v.any():
        return np.zeros_like(v)
    if k > 32 or effective_bitwidth(v) + k > 32:
        raise ScaleOverflowError(f"left shift by {k} overflows 32 bits")
    out = v << k
    if out.min() < INT32_MIN or out.max() > INT32_MAX:
        raise ScaleOverflowError(f"left shift by {k} overflows 32 bits")
    return out


def saturate_to_8(values, signed: bool) -> tuple[np.ndarray, int]:
    """Clamp to the int8/uint8 range; returns (data, number clamped)."""
    v = np.asarray(values).astype(np.int64)
    lo, hi = INT8_RANGE if signed else UINT8_RANGE
    clamped = int(np.count_nonzero((v < lo) | (v > hi)))
    out = np.clip(v, lo, hi).astype(np.int8 if signed else np.uint8)
    return out, clamped


def count_skipped_macs(a: np.ndarray, w: np.ndarray) -> int:
    """MACs in ``a @ w`` where either operand is zero."""
    a_zero = a == 0
    w_zero_per_row = np.count_nonzero(w == 0, axis=1)
    skipped = int(np.count_nonzero(a_zero)) * w.shape[1]
    skipped += int(((~a_zero).astype(np.int64) @ w_zero_per_row.astype(np.int64)).sum())
    return skipped


def int_matmul(
    a: QTensor8,
    w: QTensor8,
    counters: MacCounters | None = None,
    skip_zeros: bool = False,
) -> AccTensor32:
    """Exact int8 x int8 -> int32 matrix product with summed scale exponents.

    With ``skip_zeros`` each output row only visits the inner indices whose
    activation is nonzero, the way an MCU kernel would skip work; the result is
    identical either way.  Counters always record how many MACs a zero-skipping
    kernel avoids.
    """
    A, W = a.data, w.data
    if A.ndim != 2 or W.ndim != 2 or A.shape[1] != W.shape[0]:
        raise ValueError(f"cannot multiply shapes {A.shape} and {W.shape}")
    if A.shape[1] > MAX_INNER_DIM:
        raise ValueError(f"inner dimension {A.shape[1]} exceeds {MAX_INNER_DIM}")
    A64 = A.astype(np.int64)
    W64 = W.astype(np.int64)
    if skip_zeros:
        out = np.zeros((A.shape[0], W.shape[1]), dtype=np.int64)
        for i in range(A.shape[0]):
            nz = np.flatnonzero(A64[i])
            if nz.size:
                out[i] = A64[i, nz] @ W64[nz]
    else:
        out = A64 @ W64
    if counters is not None:
        b, n = A.shape
        counters.total_macs += b * n * W.shape[1]
        counters.skipped_macs += count_skipped_macs(A, W)
    return AccTensor32(out, a.scale + w.scale)


def dequantize(t: QTensor8 | AccTensor32) -> np.ndarray:
    """Real-valued view (float64) for metrics, losses in logs, and oracles."""
    return t.data.astype(np.float64) * scale_float(t.scale)
