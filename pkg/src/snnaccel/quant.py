"""Symmetric power-of-two fixed-point quantization.

A real tensor r is mapped to integers via q = round(S * r) with a scale
S = 2^n chosen from the tensor's absolute maximum:

    n = floor(log2(2^(bits-1) / max_abs)),   S = 2^n

Rounding is half-away-from-zero and results saturate at the signed
``bits``-wide range. Because S is a power of two, multiplying or dividing
by it is exact in IEEE double precision, which keeps the whole pipeline
bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRange

MIN_BITS = 2
MAX_BITS = 16


@dataclass(frozen=True)
class QuantParams:
    """Bit width and power-of-two scale for one quantized tensor.

    scale_exp may be negative, in which case the scale is a fractional
    power of two.
    """

    bits: int
    scale_exp: int

    def __post_init__(self):
        if not MIN_BITS <= self.bits <= MAX_BITS:
            raise ValueError(f"bit width must be in [{MIN_BITS}, {MAX_BITS}], got {self.bits}")

    @property
    def scale(self) -> float:
        """The scale S = 2^scale_exp, exact in double precision."""
        return math.ldexp(1.0, self.scale_exp)

    @property
    def qmin(self) -> int:
        return -(1 << (self.bits - 1))

    @property
    def qmax(self) -> int:
        return (1 << (self.bits - 1)) - 1


@dataclass(frozen=True)
class IntTensor:
    """Signed integer tensor plus the params that map it back to reals."""

    values: np.ndarray
    params: QuantParams

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.int64)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        lo, hi = self.params.qmin, self.params.qmax
        if values.size and (values.min() < lo or values.max() > hi):
            raise ValueError(f"values outside signed {self.params.bits}-bit range [{lo}, {hi}]")

    @property
    def shape(self) -> tuple:
        return self.values.shape


def floor_log2(x: float) -> int:
    """Exact floor(log2(x)) for positive finite x, no float log involved."""
    if not (x > 0) or math.isinf(x):
        raise ValueError(f"floor_log2 needs a positive finite value, got {x}")
    mantissa, exponent = math.frexp(x)  # x = mantissa * 2^exponent, mantissa in [0.5, 1)
    return exponent - 1


def is_power_of_two(x: float) -> bool:
    mantissa, _ = math.frexp(x)
    return mantissa == 0.5


def compute_scale(max_abs: float, bits: int) -> QuantParams:
    """Pick the power-of-two scale for a tensor with absolute maximum max_abs.

    Raises DegenerateRange for max_abs == 0; an all-zero tensor has no
    usable range and the caller decides the substitute scale (the model
    preparation pipeline uses scale_exp = bits - 1 so zeros stay zeros).
    """
    if max_abs == 0:
        raise DegenerateRange("max_abs is zero; caller must substitute a scale")
    if not (max_abs > 0) or math.isinf(max_abs):
        raise ValueError(f"max_abs must be positive and finite, got {max_abs}")
    # floor(log2(2^(bits-1) / max_abs)) without the rounding hazards of a
    # float division: split into (bits-1) - log2(max_abs) and floor exactly.
    e = floor_log2(max_abs)
    if is_power_of_two(max_abs):
        n = (bits - 1) - e
    else:
        n = (bits - 1) - e - 1
    if abs(n) > 960:
        # 2^n and 2^-n must both stay exact finite doubles
        raise ValueError(f"scale exponent {n} outside the double-exact range")
    return QuantParams(bits=bits, scale_exp=n)


def round_half_away_from_zero(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero, bit-exactly.

    The tie test compares 2*x against 2*floor(x) + 1; both sides are exact
    doubles for the magnitudes quantization produces, so no intermediate
    rounding can flip a decision near the .5 boundary.
    """
    x = np.asarray(x, dtype=np.float64)
    f = np.floor(x)
    twice = 2.0 * x
    half_line = 2.0 * f + 1.0
    go_up = (twice > half_line) | ((twice == half_line) & (x > 0))
    return f + go_up


def quantize(values: np.ndarray, params: QuantParams) -> IntTensor:
    """q = clamp(round(S * r)) into the signed ``bits``-wide range."""
    r = np.asarray(values, dtype=np.float64)
    scaled = r * params.scale  # exact: power-of-two multiply
    q = round_half_away_from_zero(scaled)
    q = np.clip(q, params.qmin, params.qmax)
    return IntTensor(values=q.astype(np.int64), params=params)


def dequantize(t: IntTensor) -> np.ndarray:
    """r = q / S elementwise; exact because S is a power of two."""
    return t.values.astype(np.float64) * math.ldexp(1.0, -t.params.scale_exp)


def scale_for_tensor(values: np.ndarray, bits: int) -> QuantParams:
    """compute_scale over max|values|, substituting scale_exp = bits - 1
    for all-zero tensors so they quantize to all zeros."""
    r = np.asarray(values, dtype=np.float64)
    max_abs = float(np.max(np.abs(r))) if r.size else 0.0
    try:
        return compute_scale(max_abs, bits)
    except DegenerateRange:
        return QuantParams(bits=bits, scale_exp=bits - 1)


def fake_quantize(values: np.ndarray, bits: int) -> np.ndarray:
    """Quantize-dequantize round trip used to simulate deployment precision.

    All-zero input maps to all zeros via the degenerate-range substitute
    scale. Under a straight-through estimator this op is treated as the
    identity for gradients; that contract lives in the trainer, the forward
    path here is plain.
    """
    r = np.asarray(values, dtype=np.float64)
    return dequantize(quantize(r, scale_for_tensor(r, bits)))


def validate_spike_map(x: np.ndarray) -> np.ndarray:
    """Check a (channels, height, width) map is binary; returns it as uint8."""
    arr = np.asarray(x)
    if arr.ndim != 3:
        raise ValueError(f"spike map must be 3-d (C, H, W), got shape {arr.shape}")
    if arr.size and not np.isin(np.unique(arr), (0, 1)).all():
        raise ValueError("spike map contains values outside {0, 1}")
    return arr.astype(np.uint8)
