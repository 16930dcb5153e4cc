"""Quantization unit tests.

Expected values are frozen from the exact-arithmetic oracles below
(fractions.Fraction, no floating point), which stay independent of the
numpy implementation they check.
"""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snnaccel.errors import DegenerateRange
from snnaccel.quant import (
    IntTensor,
    QuantParams,
    compute_scale,
    dequantize,
    fake_quantize,
    quantize,
    round_half_away_from_zero,
    scale_for_tensor,
    validate_spike_map,
)


# ---------------------------------------------------------------------------
# Exact-arithmetic oracles
# ---------------------------------------------------------------------------

def oracle_scale_exp(max_abs: Fraction, bits: int) -> int:
    """Largest n with 2^n <= 2^(bits-1) / max_abs, by exact search."""
    target = Fraction(2) ** (bits - 1) / max_abs
    n = 0
    while Fraction(2) ** (n + 1) <= target:
        n += 1
    while Fraction(2) ** n > target:
        n -= 1
    return n


def oracle_round_half_away(x: Fraction) -> int:
    f = math.floor(x)
    frac = x - f
    if frac > Fraction(1, 2):
        return f + 1
    if frac < Fraction(1, 2):
        return f
    return f + 1 if x > 0 else f


def oracle_quantize(r: Fraction, bits: int, scale_exp: int) -> int:
    q = oracle_round_half_away(r * Fraction(2) ** scale_exp)
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return max(lo, min(hi, q))


# ---------------------------------------------------------------------------
# compute_scale
# ---------------------------------------------------------------------------

class TestComputeScale:
    def test_unit_range(self):
        p = compute_scale(1.0, 8)
        assert (p.scale_exp, p.scale) == (7, 128.0)
        assert oracle_scale_exp(Fraction(1), 8) == 7

    def test_range_equals_qmax_power(self):
        p = compute_scale(128.0, 8)
        assert (p.scale_exp, p.scale) == (0, 1.0)

    def test_range_three(self):
        p = compute_scale(3.0, 8)
        assert (p.scale_exp, p.scale) == (5, 32.0)
        assert oracle_scale_exp(Fraction(3), 8) == 5

    def test_fractional_range(self):
        # 2^7 / 0.3 = 426.67, floor(log2) = 8
        p = compute_scale(0.3, 8)
        assert p.scale_exp == oracle_scale_exp(Fraction(3, 10), 8) == 8

    def test_zero_range_raises(self):
        with pytest.raises(DegenerateRange):
            compute_scale(0.0, 8)

    def test_negative_range_rejected(self):
        with pytest.raises(ValueError):
            compute_scale(-1.0, 8)

    def test_bits_bounds(self):
        with pytest.raises(ValueError):
            compute_scale(1.0, 1)
        with pytest.raises(ValueError):
            compute_scale(1.0, 17)

    def test_extreme_magnitude_rejected(self):
        with pytest.raises(ValueError):
            compute_scale(5e-324, 8)

    @given(st.floats(min_value=1e-30, max_value=1e30), st.integers(2, 16))
    def test_matches_fraction_oracle(self, max_abs, bits):
        expected = oracle_scale_exp(Fraction(max_abs), bits)
        assert compute_scale(max_abs, bits).scale_exp == expected

    @given(
        st.floats(min_value=1e-20, max_value=1e20),
        st.floats(min_value=1.0, max_value=1e6),
        st.integers(2, 16),
    )
    def test_monotone_in_range(self, max_abs, factor, bits):
        # larger range never gets a larger exponent
        wider = compute_scale(max_abs * factor, bits)
        assert wider.scale_exp <= compute_scale(max_abs, bits).scale_exp

    def test_scale_is_power_of_two(self):
        for max_abs in (0.1, 0.5, 1.0, 1.7, 3.0, 100.0, 12345.6):
            p = compute_scale(max_abs, 8)
            m, _ = math.frexp(p.scale)
            assert m == 0.5


# ---------------------------------------------------------------------------
# quantize / dequantize
# ---------------------------------------------------------------------------

class TestQuantize:
    def test_half_at_scale_128(self):
        t = quantize(np.array([0.5]), QuantParams(8, 7))
        assert t.values.tolist() == [64]
        assert oracle_quantize(Fraction(1, 2), 8, 7) == 64

    def test_zero(self):
        assert quantize(np.array([0.0]), QuantParams(8, 7)).values.tolist() == [0]

    def test_saturation_at_top(self):
        # round(1.0 * 128) = 128, clamped to the 8-bit max
        t = quantize(np.array([1.0]), QuantParams(8, 7))
        assert t.values.tolist() == [127]
        assert oracle_quantize(Fraction(1), 8, 7) == 127

    def test_negative_edge_not_clamped(self):
        t = quantize(np.array([-1.0]), QuantParams(8, 7))
        assert t.values.tolist() == [-128]

    def test_dequantize_examples(self):
        p = QuantParams(8, 7)
        assert dequantize(IntTensor(np.array([64]), p)).tolist() == [0.5]
        assert dequantize(IntTensor(np.array([0]), p)).tolist() == [0.0]
        assert dequantize(IntTensor(np.array([-128]), p)).tolist() == [-1.0]

    def test_rounding_ties_away_from_zero(self):
        p = QuantParams(8, 1)  # S = 2
        vals = np.array([0.25, -0.25, 0.75, -0.75, 1.25, -1.25])
        got = quantize(vals, p).values.tolist()
        expected = [oracle_quantize(Fraction(v), 8, 1) for v in (
            Fraction(1, 4), Fraction(-1, 4), Fraction(3, 4),
            Fraction(-3, 4), Fraction(5, 4), Fraction(-5, 4))]
        assert got == expected == [1, -1, 2, -2, 3, -3]

    def test_round_half_away_pathological_double(self):
        # the largest double below 0.5: float subtraction of x - floor(x)
        # lands exactly on 0.5 for the negated value, which a naive tie
        # test mis-rounds
        x = math.nextafter(0.5, 0.0)
        assert round_half_away_from_zero(np.array([x]))[0] == 0.0
        assert round_half_away_from_zero(np.array([-x]))[0] == 0.0

    @given(
        st.lists(st.floats(min_value=-1e8, max_value=1e8), min_size=1, max_size=32),
        st.integers(2, 16),
    )
    def test_matches_fraction_oracle(self, values, bits):
        arr = np.array(values)
        max_abs = float(np.max(np.abs(arr)))
        if max_abs < 1e-100:  # degenerate or out of the documented scale range
            return
        p = compute_scale(max_abs, bits)
        got = quantize(arr, p).values
        expected = [oracle_quantize(Fraction(v), bits, p.scale_exp) for v in values]
        assert got.tolist() == expected

    @given(
        st.lists(st.floats(min_value=-1e8, max_value=1e8), min_size=1, max_size=32),
        st.integers(2, 16),
    )
    def test_output_in_signed_range(self, values, bits):
        arr = np.array(values)
        if float(np.max(np.abs(arr))) < 1e-100:
            return
        p = scale_for_tensor(arr, bits)
        t = quantize(arr, p)
        assert t.values.min() >= p.qmin
        assert t.values.max() <= p.qmax

    @given(
        st.lists(st.integers(-128, 127), min_size=1, max_size=32),
        st.integers(-20, 20),
    )
    def test_roundtrip_identity_without_clamp(self, ints, scale_exp):
        # quantize(dequantize(t)) == t whenever no clamping occurred
        p = QuantParams(8, scale_exp)
        t = IntTensor(np.array(ints), p)
        back = quantize(dequantize(t), p)
        assert np.array_equal(back.values, t.values)


# ---------------------------------------------------------------------------
# fake_quantize
# ---------------------------------------------------------------------------

class TestFakeQuantize:
    def test_all_zeros(self):
        out = fake_quantize(np.zeros(5), 8)
        assert np.array_equal(out, np.zeros(5))

    def test_representable_pair(self):
        out = fake_quantize(np.array([0.5, -1.0]), 8)
        assert out.tolist() == [0.5, -1.0]

    def test_point_three(self):
        # scale selection picks S = 256 here; round(0.30 * 256) = 77
        out = fake_quantize(np.array([0.30]), 8)
        assert out.tolist() == [77.0 / 256.0]
        assert oracle_quantize(Fraction(3, 10), 8, 8) == 77

    @given(
        st.lists(st.floats(min_value=-1e8, max_value=1e8), min_size=1, max_size=64),
        st.integers(2, 16),
    )
    @settings(max_examples=200)
    def test_error_bound(self, values, bits):
        arr = np.array(values)
        max_abs = float(np.max(np.abs(arr)))
        if max_abs < 1e-100:
            return
        p = compute_scale(max_abs, bits)
        out = fake_quantize(arr, bits)
        half_step = 0.5 * math.ldexp(1.0, -p.scale_exp)
        clamp_edge = (p.qmax + 0.5) * math.ldexp(1.0, -p.scale_exp)
        away_from_clamp = np.abs(arr) < clamp_edge
        assert np.all(np.abs(out - arr)[away_from_clamp] <= half_step)


def test_int_tensor_range_enforced():
    with pytest.raises(ValueError):
        IntTensor(np.array([128]), QuantParams(8, 0))
    with pytest.raises(ValueError):
        IntTensor(np.array([-129]), QuantParams(8, 0))


def test_quant_params_invariants():
    p = QuantParams(8, 7)
    assert p.scale == 2.0 ** 7
    with pytest.raises(ValueError):
        QuantParams(1, 0)
    with pytest.raises(ValueError):
        QuantParams(17, 0)


def test_validate_spike_map():
    ok = validate_spike_map(np.ones((2, 3, 3), dtype=np.int64))
    assert ok.dtype == np.uint8
    with pytest.raises(ValueError):
        validate_spike_map(np.full((1, 2, 2), 2))
    with pytest.raises(ValueError):
        validate_spike_map(np.ones((2, 2)))
