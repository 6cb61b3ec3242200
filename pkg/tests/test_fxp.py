from fractions import Fraction

import numpy as np
import pytest

from merinda.fxp import (
    FxAlignmentError,
    FxFormat,
    FxFormatMismatch,
    FxValue,
    dequantize,
    fx_add,
    fx_mac,
    fx_mul,
    fx_neg,
    fx_sub,
    make_accumulator,
    parse_format,
    quantize,
    quantize_array,
    requantize,
)

Q2_14 = FxFormat(16, 14)
Q2_6 = FxFormat(8, 6)


def oracle_clamp(raw: int, fmt: FxFormat) -> int:
    return max(fmt.raw_min, min(fmt.raw_max, raw))


class TestFormat:
    def test_parse_plain(self):
        fmt = parse_format("Q2.14")
        assert (fmt.total_bits, fmt.frac_bits) == (16, 14)

    def test_parse_explicit_total(self):
        assert parse_format("Q2.14/16") == Q2_14
        fmt = parse_format("Q8.23/32")
        assert (fmt.total_bits, fmt.frac_bits) == (32, 23)

    def test_descriptor_round_trip(self):
        for fmt in (Q2_14, Q2_6, FxFormat(32, 23), FxFormat(12, 0)):
            assert parse_format(fmt.descriptor()) == fmt

    @pytest.mark.parametrize("text", ["Q2", "2.14", "Q2.14/64", "Qa.b", ""])
    def test_parse_rejects(self, text):
        with pytest.raises(ValueError):
            parse_format(text)

    @pytest.mark.parametrize("total,frac", [(7, 3), (33, 10), (16, 16), (16, -1)])
    def test_invalid_formats(self, total, frac):
        with pytest.raises(ValueError):
            FxFormat(total, frac)

    def test_range(self):
        assert Q2_14.max_value == (2**15 - 1) * 2.0**-14
        assert Q2_14.min_value == -2.0
        assert Q2_14.ulp == 2.0**-14

    def test_raw_bounds_enforced(self):
        with pytest.raises(ValueError):
            FxValue(1 << 15, Q2_14)


class TestQuantize:
    def test_zero_exact(self):
        assert quantize(0.0, Q2_14).raw == 0

    def test_half_exact(self):
        v = quantize(0.5, Q2_14)
        assert v.raw == 8192
        assert v.value == 0.5

    def test_saturates_above_max(self):
        # max representable is (2^15 - 1) * 2^-14 ~= 1.99994
        max_value = (2**15 - 1) * 2.0**-14
        assert max_value == pytest.approx(1.99994, abs=1e-5)
        assert quantize(10.0, Q2_14).raw == 32767
        assert quantize(10.0, Q2_14).value == max_value
        assert quantize(-10.0, Q2_14).raw == -32768

    def test_round_to_nearest_even_ties(self):
        # 0.5 ulp and 1.5 ulp ties land on the even raw value
        assert quantize(0.5 * Q2_14.ulp, Q2_14).raw == 0
        assert quantize(1.5 * Q2_14.ulp, Q2_14).raw == 2
        assert quantize(2.5 * Q2_14.ulp, Q2_14).raw == 2
        assert quantize(-0.5 * Q2_14.ulp, Q2_14).raw == 0

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            quantize(float("nan"), Q2_14)

    def test_infinities_saturate(self):
        assert quantize(float("inf"), Q2_14).raw == Q2_14.raw_max
        assert quantize(float("-inf"), Q2_14).raw == Q2_14.raw_min

    def test_round_trip_bound(self):
        rng = np.random.default_rng(7)
        for fmt in (Q2_14, Q2_6, FxFormat(32, 23)):
            xs = rng.uniform(fmt.min_value, fmt.max_value, 2000)
            for x in xs:
                err = abs(dequantize(quantize(float(x), fmt)) - x)
                assert err <= 2.0 ** (-fmt.frac_bits - 1)

    def test_monotone(self):
        rng = np.random.default_rng(8)
        xs = np.sort(rng.uniform(-4, 4, 3000))
        raws = [quantize(float(x), Q2_6).raw for x in xs]
        assert all(b >= a for a, b in zip(raws, raws[1:]))

    def test_array_matches_scalar(self):
        rng = np.random.default_rng(9)
        xs = np.concatenate([
            rng.uniform(-3, 3, 500),
            np.arange(-8, 8) * 0.5 * Q2_6.ulp,  # exact tie points
        ])
        raws = quantize_array(xs, Q2_6)
        for x, r in zip(xs, raws):
            assert quantize(float(x), Q2_6).raw == r


class TestAddSub:
    def test_quarter_plus_quarter(self):
        a = quantize(0.25, Q2_14)
        assert fx_add(a, a).value == 0.5

    def test_saturation_at_max(self):
        top = FxValue(Q2_14.raw_max, Q2_14)
        ulp = FxValue(1, Q2_14)
        assert fx_add(top, ulp).raw == Q2_14.raw_max

    def test_format_mismatch(self):
        with pytest.raises(FxFormatMismatch):
            fx_add(quantize(0.1, Q2_14), quantize(0.1, Q2_6))

    def test_exhaustive_8bit_against_oracle(self):
        fmt = Q2_6
        for ra in range(fmt.raw_min, fmt.raw_max + 1):
            a = FxValue(ra, fmt)
            for rb in range(fmt.raw_min, fmt.raw_max + 1):
                b = FxValue(rb, fmt)
                assert fx_add(a, b).raw == oracle_clamp(ra + rb, fmt)
                assert fx_sub(a, b).raw == oracle_clamp(ra - rb, fmt)

    def test_random_16bit_against_oracle(self):
        rng = np.random.default_rng(10)
        raws = rng.integers(Q2_14.raw_min, Q2_14.raw_max + 1, size=(4000, 2))
        for ra, rb in raws:
            got = fx_add(FxValue(int(ra), Q2_14), FxValue(int(rb), Q2_14)).raw
            assert got == oracle_clamp(int(ra) + int(rb), Q2_14)

    def test_neg_saturates_min(self):
        assert fx_neg(FxValue(Q2_14.raw_min, Q2_14)).raw == Q2_14.raw_max


class TestMac:
    def test_basic_quarter(self):
        acc_fmt = make_accumulator(Q2_14, Q2_14)
        acc = FxValue(0, acc_fmt)
        out = fx_mac(acc, quantize(0.5, Q2_14), quantize(0.5, Q2_14))
        assert out.value == 0.25

    def test_multiply_by_zero_keeps_acc(self):
        acc_fmt = make_accumulator(Q2_14, Q2_14)
        acc = quantize(1.234, acc_fmt)
        zero = quantize(0.0, Q2_14)
        y = quantize(-0.77, Q2_14)
        assert fx_mac(acc, zero, y).raw == acc.raw

    def test_dot_product_against_rational_oracle(self):
        rng = np.random.default_rng(11)
        acc_fmt = make_accumulator(Q2_14, Q2_14)
        for _ in range(50):
            ws = [quantize(float(x), Q2_14) for x in rng.uniform(-1.5, 1.5, 8)]
            vs = [quantize(float(x), Q2_14) for x in rng.uniform(-1.5, 1.5, 8)]
            acc = FxValue(0, acc_fmt)
            exact = Fraction(0)
            for w, v in zip(ws, vs):
                acc = fx_mac(acc, w, v)
                exact += Fraction(w.raw, 1 << 14) * Fraction(v.raw, 1 << 14)
            err = abs(Fraction(acc.raw, 1 << acc_fmt.frac_bits) - exact)
            assert err <= Fraction(1, 1 << acc_fmt.frac_bits)

    def test_random_16bit_mac_against_oracle(self):
        rng = np.random.default_rng(12)
        acc_fmt = make_accumulator(Q2_14, Q2_14)
        for _ in range(3000):
            ra = int(rng.integers(Q2_14.raw_min, Q2_14.raw_max + 1))
            rb = int(rng.integers(Q2_14.raw_min, Q2_14.raw_max + 1))
            racc = int(rng.integers(acc_fmt.raw_min, acc_fmt.raw_max + 1))
            got = fx_mac(FxValue(racc, acc_fmt), FxValue(ra, Q2_14),
                         FxValue(rb, Q2_14)).raw
            assert got == oracle_clamp(racc + ra * rb, acc_fmt)

    def test_alignment_error_for_wide_products(self):
        wide = FxFormat(32, 23)
        with pytest.raises(FxAlignmentError):
            make_accumulator(wide, wide)

    def test_rounding_accumulator_path(self):
        # explicit narrow accumulator: product is RNE-rounded into it
        wide = FxFormat(32, 23)
        acc = FxValue(0, wide)
        a = quantize(0.3, wide)
        b = quantize(0.7, wide)
        got = fx_mac(acc, a, b)
        exact = Fraction(a.raw * b.raw, 1 << 46)
        assert abs(Fraction(got.raw, 1 << 23) - exact) <= Fraction(1, 1 << 24)

    def test_mac_saturates(self):
        acc_fmt = make_accumulator(Q2_6, Q2_6)
        acc = FxValue(acc_fmt.raw_max, acc_fmt)
        one = quantize(1.0, Q2_6)
        assert fx_mac(acc, one, one).raw == acc_fmt.raw_max

    def test_exhaustive_8bit_mac_against_oracle(self):
        # acc fraction equals the product fraction, so the oracle is the
        # plain integer product-accumulate followed by clamping
        acc_fmt = make_accumulator(Q2_6, Q2_6)
        accs = (0, acc_fmt.raw_min // 2, acc_fmt.raw_max)
        for ra in range(Q2_6.raw_min, Q2_6.raw_max + 1):
            a = FxValue(ra, Q2_6)
            for rb in range(Q2_6.raw_min, Q2_6.raw_max + 1):
                b = FxValue(rb, Q2_6)
                for acc_raw in accs:
                    got = fx_mac(FxValue(acc_raw, acc_fmt), a, b).raw
                    assert got == oracle_clamp(acc_raw + ra * rb, acc_fmt)


class TestMulRequantize:
    def test_mul(self):
        out = fx_mul(quantize(0.5, Q2_6), quantize(0.5, Q2_6), Q2_6)
        assert out.value == 0.25

    def test_requantize_down_rounds(self):
        v = quantize(0.3, Q2_14)
        narrow = requantize(v, Q2_6)
        assert abs(narrow.value - 0.3) <= Q2_6.ulp / 2 + Q2_14.ulp

    def test_requantize_up_exact(self):
        v = quantize(0.25, Q2_6)
        wide = requantize(v, Q2_14)
        assert wide.value == v.value

    def test_requantize_saturates(self):
        v = quantize(1.9, Q2_14)
        out = requantize(v, FxFormat(8, 7))  # Q1.7, max ~0.992
        assert out.raw == out.fmt.raw_max
