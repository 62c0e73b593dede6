"""Fixed-point requantization arithmetic.

One convention, used everywhere (reference executor, scheduled executor,
emitted C and its interpreter), so independent execution paths can be
compared bit for bit:

* activations are per-tensor affine int8, weights per-tensor symmetric int8;
* accumulators are int32 (the widest product sum in the supported space is
  ~9.1e8, comfortably inside int32);
* a real-valued rescale r is encoded as a 31-bit mantissa and a right
  shift: r ~= mult * 2**-shift with 2**30 <= mult < 2**31;
* rounding is half away from zero, computed in pure integer arithmetic.
"""

from __future__ import annotations

import math

import numpy as np

INT8_MIN = -128
INT8_MAX = 127
ACC_LIMIT = 2**31  # accumulators must stay strictly inside int32


def quantized_multiplier(real: float) -> tuple[int, int]:
    """Encode a positive real rescale factor as (mult, shift)."""
    if not (real > 0):
        raise ValueError(f"rescale factor must be positive, got {real}")
    mant, exp = math.frexp(real)  # real = mant * 2**exp, mant in [0.5, 1)
    mult = round(mant * (1 << 31))
    if mult == 1 << 31:  # mantissa rounded all the way up
        mult >>= 1
        exp += 1
    shift = 31 - exp
    if shift < 0:
        raise ValueError(f"rescale factor {real} too large to encode")
    return mult, shift


def fixmul(values, mult: int, shift: int):
    """values * mult * 2**-shift, rounding half away from zero.

    Works on python ints and numpy integer arrays; always returns int64
    (numpy) or int (scalar).  The int64 product is exact: |values| < 2**31
    and mult < 2**31.
    """
    v = np.asarray(values, dtype=np.int64) * mult
    rnd = 1 << (shift - 1) if shift > 0 else 0
    out = np.where(v >= 0, (v + rnd) >> shift, -((-v + rnd) >> shift))
    if np.isscalar(values) or getattr(values, "ndim", 1) == 0:
        return int(out)
    return out


def activation_bounds(scale: float, zero_point: int, has_relu6: bool) -> tuple[int, int]:
    """Clamp range in the quantized domain, activation folded in."""
    if not has_relu6:
        return INT8_MIN, INT8_MAX
    six = int(math.floor(6.0 / scale + 0.5))
    return max(INT8_MIN, zero_point), min(INT8_MAX, zero_point + six)


def requantize(acc, mult: int, shift: int, zero_point: int, qmin: int, qmax: int):
    """int32 accumulators -> int8 tensor values."""
    q = fixmul(acc, mult, shift) + zero_point
    return np.clip(q, qmin, qmax).astype(np.int8)
