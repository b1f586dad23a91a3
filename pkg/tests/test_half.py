import math
from bisect import bisect_right
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tcgen.half import CANONICAL_NAN, f16_to_f32, f32_to_f16, round_half


def decode_bits(bits: int) -> Fraction | float:
    """binary16 bit pattern -> exact value, straight from the field layout."""
    sign = -1 if bits >> 15 else 1
    exp = (bits >> 10) & 0x1F
    man = bits & 0x3FF
    if exp == 0x1F:
        return float("nan") if man else sign * float("inf")
    if exp == 0:
        return sign * Fraction(man, 1 << 24)
    return sign * (1 + Fraction(man, 1024)) * Fraction(2) ** (exp - 15)


POSITIVE = [decode_bits(b) for b in range(0x7C00)]  # increasing with the bit pattern


def encode_rne(x: Fraction, negative: bool = False) -> int:
    """Round an exact rational to binary16 by bisecting the finite values."""
    sign = 0x8000 if x < 0 or negative else 0
    mag = abs(x)
    if mag == 0:
        return sign
    top = decode_bits(0x7BFF)
    if mag >= top + Fraction(2) ** (15 - 10 - 1):  # halfway to the next binade rounds to inf
        return sign | 0x7C00
    lo = bisect_right(POSITIVE, mag) - 1
    hi = lo + 1
    dlo, dhi = mag - decode_bits(lo), decode_bits(hi) - mag
    if dlo < dhi or (dlo == dhi and lo % 2 == 0):
        return sign | lo
    return sign | hi


# 2049 sits halfway between 2048 (0x6800) and 2050; the tie goes to the even mantissa
@pytest.mark.parametrize("x,bits", [(1.0, 0x3C00), (2049.0, 0x6800), (2051.0, 0x6802), (8.0, 0x4800), (65504.0, 0x7BFF),
                                    (65519.0, 0x7BFF), (65520.0, 0x7C00), (-65520.0, 0xFC00),
                                    (2.0 ** -24, 0x0001), (2.0 ** -25, 0x0000), (3 * 2.0 ** -26, 0x0001)])
def test_conversion_examples(x, bits):
    assert int(f32_to_f16(np.float32(x))) == bits
    assert encode_rne(Fraction(x)) == bits


def test_round_trip_is_exact():
    bits = np.arange(1 << 16, dtype=np.uint16)
    back = f32_to_f16(f16_to_f32(bits))
    finite = (bits & 0x7C00) != 0x7C00
    assert np.array_equal(back[finite], bits[finite])


def test_nan_is_canonical():
    bits = f32_to_f16(np.array([np.nan, -np.nan, np.float32("nan")], dtype=np.float32))
    assert set(bits.tolist()) == {CANONICAL_NAN}


@pytest.mark.parametrize("center", [0x0001, 0x03FF, 0x0400, 0x3C00, 0x4800, 0x7BFE])
def test_rne_boundary_neighborhood(center):
    # midpoints and quarter points around each representable value near the center
    for b in range(center - 1, center + 2):
        v, nxt = decode_bits(b), decode_bits(b + 1)
        for frac in (Fraction(1, 4), Fraction(1, 2), Fraction(3, 4)):
            x = v + (nxt - v) * frac
            got = int(f32_to_f16(np.float32(float(x))))
            assert float(x) == x  # exactly representable in fp32
            assert got == encode_rne(x)


@given(st.floats(min_value=-70000, max_value=70000, width=32))
def test_matches_rational_oracle(x):
    assert int(f32_to_f16(np.float32(x))) == encode_rne(Fraction(x), math.copysign(1, x) < 0)


@given(st.integers(0, 0xFFFF))
def test_widening_matches_field_decode(bits):
    ref = decode_bits(bits)
    got = float(f16_to_f32(np.uint16(bits)))
    if isinstance(ref, float) and np.isnan(ref):
        assert np.isnan(got)
    else:
        assert got == ref


def test_round_half_returns_float16():
    out = round_half(np.array([1.0, 1e6], dtype=np.float32))
    assert out.dtype == np.float16
    assert out[0] == 1.0 and np.isinf(out[1])
