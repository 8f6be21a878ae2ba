"""Integer-only rescaling.

Arbitrary ratios are applied as sums of power-of-two shifts; the two fixed
non-power-of-two steps are

* upscale:   Q -> Q>>1 + Q>>2   (data x 3/4, scale x 4/3, U += 1)
* downscale: Q -> Q + Q>>2      (data x 5/4, scale x 4/5, D += 1)

where ``>>`` is :func:`shift_and_round`.  Every function here works on
32-bit working copies; narrowing back to 8 bits is the caller's job.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .inttensor import (
    INT32_MAX,
    INT32_MIN,
    ScaleExp,
    ScaleOverflowError,
    effective_bitwidth,
    scale_value,
    shift_and_round,
)


def _check32(v: np.ndarray) -> np.ndarray:
    if v.size and (v.min() < INT32_MIN or v.max() > INT32_MAX):
        raise ScaleOverflowError("intermediate does not fit in 32 bits")
    return v


def floor_log2(r: Fraction) -> int:
    """Exact floor(log2(r)) for a positive rational."""
    r = Fraction(r)
    if r <= 0:
        raise ValueError("ratio must be positive")
    e = r.numerator.bit_length() - r.denominator.bit_length()
    if r < Fraction(2) ** e:
        e -= 1
    return e


@dataclass(frozen=True)
class Decomposition:
    """Greedy binary expansion ``ratio ~= sum(2**e for e in exponents)``."""

    exponents: tuple[int, ...]
    n_max: int
    ratio: Fraction

    @property
    def approx(self) -> Fraction:
        return sum((Fraction(2) ** e for e in self.exponents), Fraction(0))

    @property
    def residual(self) -> Fraction:
        return self.ratio - self.approx


def decompose(r, n_max: int = 3) -> Decomposition:
    r = Fraction(r)
    if r <= 0:
        raise ValueError("ratio must be positive")
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    exps: list[int] = []
    rem = r
    e = floor_log2(r)
    c = Fraction(2) ** e
    while len(exps) < n_max and rem > 0:
        if rem >= c:
            exps.append(e)
            rem -= c
        e, c = e - 1, c / 2
    return Decomposition(tuple(exps), n_max, r)


def apply_decomposition(values, d: Decomposition) -> np.ndarray:
    """Approximate ``values * d.ratio`` with one shift-and-round per term."""
    v = np.asarray(values).astype(np.int64)
    out = np.zeros_like(v)
    for e in d.exponents:
        out += shift_and_round(v, -e)
    return _check32(out)


def upscale_q(values, times: int = 1) -> tuple[np.ndarray, ScaleExp]:
    if times < 0:
        raise ValueError("times must be non-negative")
    q = np.asarray(values).astype(np.int64)
    for _ in range(times):
        q = shift_and_round(q, 1) + shift_and_round(q, 2)
    return q, ScaleExp(0, times, 0)


def downscale_q(values, times: int = 1) -> tuple[np.ndarray, ScaleExp]:
    if times < 0:
        raise ValueError("times must be non-negative")
    q = np.asarray(values).astype(np.int64)
    for _ in range(times):
        q = _check32(q + shift_and_round(q, 2))
    return q, ScaleExp(0, 0, times)


def apply_delta(values, delta: ScaleExp) -> np.ndarray:
    """Move data to scale ``e + delta``; ``delta.U``/``delta.D`` must be >= 0.

    Left shifts run first and right shifts last so rounding happens on the
    widest values.  Downscales and upscales are interleaved to keep the
    magnitude (and hence the relative rounding error) roughly constant.
    """
    if delta.U < 0 or delta.D < 0:
        raise ValueError("upscale/downscale counts cannot be negative")
    q = np.asarray(values).astype(np.int64)
    if delta.S < 0:
        q = shift_and_round(q, delta.S)
    for i in range(max(delta.U, delta.D)):
        if i < delta.D:
            q, _ = downscale_q(q, 1)
        if i < delta.U:
            q, _ = upscale_q(q, 1)
    if delta.S > 0:
        q = shift_and_round(q, delta.S)
    return q


def align_scales(q1, e1: ScaleExp, q2, e2: ScaleExp) -> tuple[np.ndarray, np.ndarray, ScaleExp]:
    """Bring two tensors to the shared exponent (min S, max U, max D).

    An all-zero operand has no meaningful scale and simply adopts the other's.
    """
    q1 = np.asarray(q1).astype(np.int64)
    q2 = np.asarray(q2).astype(np.int64)
    if not q1.any() and q2.any():
        return np.zeros_like(q1), q2.copy(), e2
    if not q2.any() and q1.any():
        return q1.copy(), np.zeros_like(q2), e1
    common = ScaleExp(min(e1.S, e2.S), max(e1.U, e2.U), max(e1.D, e2.D))
    out1 = apply_delta(q1, common - e1)
    out2 = apply_delta(q2, common - e2)
    return out1, out2, common


def _growth_bits(delta: ScaleExp) -> int:
    # conservative bound on bit growth of apply_delta's interleaved steps
    return math.ceil(max(0.0, 0.33 * (delta.D - delta.U))) + 1


def _shrink_bits(delta: ScaleExp) -> float:
    return delta.U * -math.log2(3 / 4) - delta.D * math.log2(5 / 4)


def align_with_headroom(q1, e1: ScaleExp, q2, e2: ScaleExp, guard: int = 4,
                        limit: int = 30) -> tuple[np.ndarray, np.ndarray, ScaleExp]:
    """:func:`align_scales` with the 32-bit budget managed for the caller.

    If the coarser operand cannot be left-shifted far enough, the finer one
    is first rounded to a coarser (value-preserving) scale; its dropped bits
    sit ~``limit`` bits below the other operand's magnitude.  When upscales
    would eat into precision both operands are pre-shifted left by the same
    amount, so the shared exponent is exact and only rounding changes.
    """
    qs = [np.asarray(q1).astype(np.int64), np.asarray(q2).astype(np.int64)]
    es = [e1, e2]
    if not (qs[0].any() and qs[1].any()):
        return align_scales(qs[0], es[0], qs[1], es[1])

    def plan():
        common = ScaleExp(min(es[0].S, es[1].S), max(es[0].U, es[1].U), max(es[0].D, es[1].D))
        preds = [effective_bitwidth(q) + e.S - common.S + _growth_bits(common - e)
                 for q, e in zip(qs, es)]
        return common, preds

    common, preds = plan()
    for _ in range(4):
        worst = int(np.argmax(preds))
        other = 1 - worst
        excess = preds[worst] - limit
        if excess <= 0 or es[other].S >= es[worst].S:
            break
        k = min(excess, es[worst].S - es[other].S)
        qs[other] = shift_and_round(qs[other], k)
        es[other] = es[other].shifted(k)
        common, preds = plan()

    shrink = max(_shrink_bits(common - e) for e in es)
    if shrink > 0:
        h = min(math.ceil(shrink) + guard, limit - max(preds))
        if h > 0:
            qs = [shift_and_round(q, -h) for q in qs]
            es = [e.shifted(-h) for e in es]
    return align_scales(qs[0], es[0], qs[1], es[1])


def promote(values, e: ScaleExp, bits: int) -> tuple[np.ndarray, ScaleExp]:
    """Left-shift (exactly) until the effective bitwidth reaches ``bits``."""
    v = np.asarray(values).astype(np.int64)
    bw = effective_bitwidth(v)
    if bw == 0 or bw >= bits:
        return v.copy(), e
    k = bits - bw
    return shift_and_round(v, -k), e.shifted(-k)


def narrow(values, e: ScaleExp, bits: int) -> tuple[np.ndarray, ScaleExp]:
    """Right-shift-and-round (value preserving) down to at most ``bits``."""
    v = np.asarray(values).astype(np.int64)
    k = max(effective_bitwidth(v) - bits, 0)
    return shift_and_round(v, k), e.shifted(k)


@dataclass(frozen=True)
class RescaleEntry:
    """Integer data ratio paired with the exponent increment that cancels it."""

    q_ratio: Fraction
    delta: ScaleExp

    @property
    def adjustment(self) -> Fraction:
        return scale_value(self.delta)

    @property
    def n_ops(self) -> int:
        return self.delta.U + self.delta.D + abs(self.delta.S)


_FINE_STEPS = (
    (Fraction(1), 0, 0),
    (Fraction(3, 4), 1, 0),
    (Fraction(9, 16), 2, 0),
    (Fraction(5, 4), 0, 1),
    (Fraction(25, 16), 0, 2),
    (Fraction(15, 16), 1, 1),
)
_BIT_STEPS = ((Fraction(1, 2), 1), (Fraction(1), 0), (Fraction(2), -1))


@lru_cache(maxsize=1)
def build_rescale_table() -> tuple[RescaleEntry, ...]:
    """Every scale adjustment in (1/2, 2) reachable with at most two fixed
    upscale/downscale steps and a one-bit shift, sorted by data ratio."""
    seen: dict[ScaleExp, RescaleEntry] = {}
    for fine, u, d in _FINE_STEPS:
        for bit, s in _BIT_STEPS:
            entry = RescaleEntry(fine * bit, ScaleExp(s, u, d))
            if Fraction(1, 2) < entry.adjustment < 2:
                seen.setdefault(entry.delta, entry)
    return tuple(sorted(seen.values(), key=lambda en: en.q_ratio))


def _log_distance_key(x: Fraction, target: Fraction) -> Fraction:
    # max(x/t, t/x) orders candidates exactly as |log x - log t| does
    q = x / target
    return q if q >= 1 else 1 / q


def nearest_adjustment(target_ratio, table=None) -> ScaleExp:
    """Exponent increment (table entry plus any extra shift) whose scale
    adjustment is nearest ``target_ratio`` in log space.

    Ties go to fewer operations, then to the smaller adjustment.
    """
    target = Fraction(target_ratio)
    if target <= 0:
        raise ValueError("target ratio must be positive")
    table = build_rescale_table() if table is None else table
    best = None
    for entry in table:
        k0 = floor_log2(target / entry.adjustment)
        for k in (k0, k0 + 1):
            delta = entry.delta.shifted(k)
            adj = scale_value(delta)
            key = (_log_distance_key(adj, target), delta.U + delta.D + abs(delta.S), adj)
            if best is None or key < best[0]:
                best = (key, delta)
    return best[1]


def rescale_to_nearest(values, e: ScaleExp, target_ratio, table=None) -> tuple[np.ndarray, ScaleExp]:
    """Multiply the scale by roughly ``target_ratio`` while preserving the
    represented real values."""
    delta = nearest_adjustment(target_ratio, table)
    return apply_delta(values, delta), e + delta


def fold_exponents(values, e: ScaleExp, max_u: int, max_d: int, n_max: int = 8) -> tuple[np.ndarray, ScaleExp]:
    """Cap U and D by moving the excess factor into the data.

    Upscale/downscale exponents only ever grow; dropping ``k`` of them means
    multiplying the data by ``(4/3)**k`` (or ``(4/5)**k``), which is done with
    a greedy shift-and-add expansion of the combined ratio.  The power-of-two
    part of the ratio goes into S so the data keeps its magnitude.
    """
    du = max(e.U - max_u, 0)
    dd = max(e.D - max_d, 0)
    if du == 0 and dd == 0:
        return np.asarray(values).astype(np.int64), e
    ratio = Fraction(4, 3) ** du * Fraction(4, 5) ** dd
    k = floor_log2(ratio)
    mantissa = ratio / Fraction(2) ** k
    out = apply_decomposition(values, decompose(mantissa, n_max))
    return out, ScaleExp(e.S + k, e.U - du, e.D - dd)


def log2_scale(e: ScaleExp) -> float:
    """log2 of the scale; planning helper, never touches tensor data."""
    return e.S + e.U * math.log2(4 / 3) + e.D * math.log2(4 / 5)
