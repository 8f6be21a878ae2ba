"""Integer weight update.

The gradient is put on a common scale with the (widened) weight, normalized
so that its effective bitwidth sits ``m`` bits below the weight's, subtracted,
and the result is rounded back to int8 with a refreshed scale exponent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .inttensor import (
    AccTensor32,
    QTensor8,
    ScaleExp,
    effective_bitwidth,
    saturate_to_8,
    scale_value,
    shift_and_round,
    to_int32,
)
from .layers import LinearLayer
from .rescale import (
    align_with_headroom,
    build_rescale_table,
    fold_exponents,
    log2_scale,
    promote,
    rescale_to_nearest,
)


@dataclass
class UpdateConfig:
    m: int = 4
    # weights are widened to this many bits before alignment
    work_bits: int = 16
    # gradients more than this many bits above the weights are pre-normalized
    grad_lead_bits: int = 8
    # U and D of stored weights are folded back to at most this value
    exp_cap: int = 2
    fold_terms: int = 12
    table: tuple = field(default_factory=build_rescale_table, repr=False)

    def __post_init__(self):
        if not 1 <= self.m < 7:
            raise ValueError(f"update factor m must be in [1, 6], got {self.m}")


@dataclass
class UpdateReport:
    noop: bool
    old_scale: ScaleExp
    new_scale: ScaleExp
    clamped: int = 0
    weight_bits: int = 0
    grad_bits: int = 0
    target_bits: int = 0
    grad_shift: int | None = None
    max_update: int = 0
    rescale_delta: ScaleExp | None = None
    aligned_weight: np.ndarray | None = field(default=None, repr=False)
    applied_update: np.ndarray | None = field(default=None, repr=False)
    aligned_scale: ScaleExp | None = None


class UpdateBoundError(AssertionError):
    def __init__(self, message, aligned_weight, applied_update):
        super().__init__(message)
        self.aligned_weight = aligned_weight
        self.applied_update = applied_update


def update_step_magnitude_bound(aligned_weight, applied_update, m: int) -> None:
    """Check max|update| < 2**(b_w - m) for the aligned weight bitwidth b_w.

    The bound is vacuous when b_w <= m (the update is then floored to one bit).
    """
    bw = effective_bitwidth(aligned_weight)
    if bw <= m:
        return
    top = int(np.abs(np.asarray(applied_update, dtype=np.int64)).max()) if np.size(applied_update) else 0
    if top >= 1 << (bw - m):
        raise UpdateBoundError(
            f"update magnitude {top} not below 2**({bw}-{m})", aligned_weight, applied_update)


def normalize_gradient(g_aligned: np.ndarray, target_bits: int) -> tuple[np.ndarray, int | None]:
    """Shift-and-round a gradient down to ``target_bits`` effective bits.

    Gradients already narrower than the target are returned unchanged
    (shift ``None``); amplifying them would only amplify noise.
    """
    bg = effective_bitwidth(g_aligned)
    if bg <= target_bits:
        return g_aligned, None
    shift = bg - target_bits
    out = shift_and_round(g_aligned, shift)
    if effective_bitwidth(out) > target_bits:
        # rounding carried into a new top bit
        shift += 1
        out = shift_and_round(g_aligned, shift)
    return out, shift


def update_weights(layer: LinearLayer, g32: AccTensor32, cfg: UpdateConfig) -> UpdateReport:
    w = layer.weights
    if g32.shape != w.shape:
        raise ValueError(f"gradient shape {g32.shape} does not match weights {w.shape}")
    layer.clear_cache()
    if not g32.data.any():
        return UpdateReport(noop=True, old_scale=w.scale, new_scale=w.scale)

    g, e_g = g32.data.astype(np.int64), g32.scale
    wd, e_w = w.data.astype(np.int64), w.scale
    bw_w = effective_bitwidth(wd)
    if bw_w:
        # only the top bits of a gradient that dwarfs the weights survive the
        # normalization below, so move its exponent down instead of its data
        lead = (log2_scale(e_g) + effective_bitwidth(g)) - (log2_scale(e_w) + bw_w)
        if lead > cfg.grad_lead_bits:
            e_g = e_g.shifted(-math.ceil(lead - cfg.grad_lead_bits))
    wd, e_wide = promote(wd, e_w, cfg.work_bits)

    w_al, g_al, e_c = align_with_headroom(wd, e_wide, g, e_g)
    b_w = effective_bitwidth(w_al)
    b_g = effective_bitwidth(g_al)
    target = max(b_w - cfg.m, 1)
    g_applied, shift = normalize_gradient(g_al, target)
    w_new = to_int32(w_al - g_applied).astype(np.int64)

    w_f, e_f = fold_exponents(w_new, e_c, cfg.exp_cap, cfg.exp_cap, cfg.fold_terms)
    w_r, e_r = rescale_to_nearest(w_f, e_f, scale_value(e_w) / scale_value(e_f), cfg.table)
    bits = effective_bitwidth(w_r)
    sr = max(bits - 7, 0)
    data, clamped = saturate_to_8(shift_and_round(w_r, sr), signed=True)
    new_scale = e_r.shifted(sr)
    layer.weights = QTensor8(data, new_scale, signed=True)
    return UpdateReport(
        noop=False,
        old_scale=e_w,
        new_scale=new_scale,
        clamped=clamped,
        weight_bits=b_w,
        grad_bits=b_g,
        target_bits=target,
        grad_shift=shift,
        max_update=int(np.abs(g_applied).max()),
        rescale_delta=e_r - e_f,
        aligned_weight=w_al,
        applied_update=g_applied,
        aligned_scale=e_c,
    )
