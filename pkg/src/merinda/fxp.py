"""Q-format fixed-point arithmetic mirroring the accelerator datapath.

Values are two's-complement integers scaled by 2**-frac_bits.  All
operations saturate on overflow (wrap-around would silently corrupt the
recovery loss) and round to nearest, ties to even.  MAC chains accumulate
in a wider format whose fraction normally equals the sum of the operand
fractions, so a dot product is bit-exact up to a single final saturation.

Format descriptors are written ``Q<int>.<frac>`` with an optional explicit
total width, e.g. ``Q2.14/16`` (sign bit counted in the integer field).
When the total is given it wins; the integer field is then nominal and the
value range follows from ``total_bits - frac_bits``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FxFormat",
    "FxValue",
    "FxFormatMismatch",
    "FxAlignmentError",
    "parse_format",
    "quantize",
    "dequantize",
    "requantize",
    "fx_add",
    "fx_sub",
    "fx_neg",
    "fx_mul",
    "fx_mac",
    "make_accumulator",
    "quantize_array",
    "dequantize_array",
    "DEFAULT_ACTIVATION_FORMAT",
    "DEFAULT_WEIGHT_FORMAT",
    "ACCUMULATOR_FRAC_CAP",
]


class FxFormatMismatch(ValueError):
    """Two operands carry different formats where equality is required."""


class FxAlignmentError(ValueError):
    """Accumulator format cannot hold the product fraction exactly."""


_FORMAT_RE = re.compile(r"^Q(\d+)\.(\d+)(?:/(\d+))?$")


@dataclass(frozen=True)
class FxFormat:
    """Signed two's-complement fixed-point format."""

    total_bits: int
    frac_bits: int
    signed: bool = True

    def __post_init__(self) -> None:
        if not self.signed:
            raise ValueError("only signed formats are supported")
        if not 8 <= self.total_bits <= 32:
            raise ValueError(f"total_bits must be in [8, 32], got {self.total_bits}")
        if not 0 <= self.frac_bits < self.total_bits:
            raise ValueError(
                f"frac_bits must be in [0, total_bits), got {self.frac_bits}/{self.total_bits}"
            )

    @property
    def int_bits(self) -> int:
        """Integer bits including the sign bit."""
        return self.total_bits - self.frac_bits

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def raw_max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def ulp(self) -> float:
        return 2.0 ** (-self.frac_bits)

    @property
    def min_value(self) -> float:
        return self.raw_min * self.ulp

    @property
    def max_value(self) -> float:
        return self.raw_max * self.ulp

    def descriptor(self) -> str:
        return f"Q{self.int_bits}.{self.frac_bits}/{self.total_bits}"

    def __str__(self) -> str:  # pragma: no cover - repr convenience
        return self.descriptor()


def parse_format(text: str) -> FxFormat:
    """Parse a ``Q<int>.<frac>[/<total>]`` descriptor.

    Without an explicit total the width is int + frac (sign inside the
    integer field), so ``Q2.14`` is 16 bits wide.
    """
    m = _FORMAT_RE.match(text.strip())
    if m is None:
        raise ValueError(f"bad format descriptor {text!r}")
    int_part, frac, total = int(m.group(1)), int(m.group(2)), m.group(3)
    total_bits = int(total) if total is not None else int_part + frac
    return FxFormat(total_bits=total_bits, frac_bits=frac)


DEFAULT_ACTIVATION_FORMAT = FxFormat(8, 6)    # Q2.6/8
DEFAULT_WEIGHT_FORMAT = FxFormat(16, 14)      # Q2.14/16
DEFAULT_ACCUMULATOR_BITS = 32

# Wide-operand products (e.g. Q8.23 x Q8.23) cannot keep the full fraction
# inside a 32-bit accumulator; cap it and round the products instead.
ACCUMULATOR_FRAC_CAP = 23


@dataclass(frozen=True)
class FxValue:
    """Raw two's-complement payload plus its format."""

    raw: int
    fmt: FxFormat

    def __post_init__(self) -> None:
        if not self.fmt.raw_min <= self.raw <= self.fmt.raw_max:
            raise ValueError(f"raw {self.raw} outside {self.fmt.descriptor()}")

    @property
    def value(self) -> float:
        return self.raw * self.fmt.ulp


def _round_nearest_even(x: float) -> int:
    # Python's round() on a float is round-half-to-even.
    return round(x)


def _rne_shift_right(v: int, shift: int) -> int:
    """Arithmetic right shift with round-to-nearest-even on the dropped bits."""
    if shift <= 0:
        return v << (-shift)
    q = v >> shift
    rem = v & ((1 << shift) - 1)
    half = 1 << (shift - 1)
    if rem > half or (rem == half and (q & 1)):
        q += 1
    return q


def _clamp(raw: int, fmt: FxFormat) -> int:
    if raw > fmt.raw_max:
        return fmt.raw_max
    if raw < fmt.raw_min:
        return fmt.raw_min
    return raw


def quantize(x: float, fmt: FxFormat) -> FxValue:
    """Round-to-nearest-even of x * 2**frac, saturated to the format range.

    NaN is a contract violation; infinities saturate like any other
    out-of-range input.
    """
    if math.isnan(x):
        raise ValueError("cannot quantize NaN")
    if math.isinf(x):
        return FxValue(fmt.raw_max if x > 0 else fmt.raw_min, fmt)
    scaled = x * (1 << fmt.frac_bits)
    if scaled >= fmt.raw_max:
        return FxValue(fmt.raw_max, fmt)
    if scaled <= fmt.raw_min:
        return FxValue(fmt.raw_min, fmt)
    return FxValue(_round_nearest_even(scaled), fmt)


def dequantize(v: FxValue) -> float:
    return v.value


def requantize(v: FxValue, fmt: FxFormat) -> FxValue:
    """Convert between formats; exact when gaining fraction bits, RNE otherwise."""
    if fmt == v.fmt:
        return v
    raw = _rne_shift_right(v.raw, v.fmt.frac_bits - fmt.frac_bits)
    return FxValue(_clamp(raw, fmt), fmt)


def _require_same_format(a: FxValue, b: FxValue) -> None:
    if a.fmt != b.fmt:
        raise FxFormatMismatch(f"{a.fmt.descriptor()} vs {b.fmt.descriptor()}")


def fx_add(a: FxValue, b: FxValue) -> FxValue:
    """Saturating add of two values in the same format."""
    _require_same_format(a, b)
    return FxValue(_clamp(a.raw + b.raw, a.fmt), a.fmt)


def fx_sub(a: FxValue, b: FxValue) -> FxValue:
    _require_same_format(a, b)
    return FxValue(_clamp(a.raw - b.raw, a.fmt), a.fmt)


def fx_neg(a: FxValue) -> FxValue:
    return FxValue(_clamp(-a.raw, a.fmt), a.fmt)


def make_accumulator(a_fmt: FxFormat, b_fmt: FxFormat,
                     total_bits: int = DEFAULT_ACCUMULATOR_BITS) -> FxFormat:
    """Accumulator format whose fraction matches the a*b product exactly.

    Raises FxAlignmentError when the product fraction does not fit the
    requested width; callers must then pass an explicit (rounding)
    accumulator format to fx_mac instead.
    """
    frac = a_fmt.frac_bits + b_fmt.frac_bits
    if frac >= total_bits:
        raise FxAlignmentError(
            f"product fraction {frac} does not fit a {total_bits}-bit accumulator"
        )
    return FxFormat(total_bits, frac)


def fx_mac(acc: FxValue, a: FxValue, b: FxValue) -> FxValue:
    """acc + a*b with the product computed exactly, then saturated into acc.

    The exact integer product carries a.frac + b.frac fraction bits; it is
    aligned to the accumulator fraction (exact left shift, or RNE right
    shift when the accumulator is narrower) before the saturating add.
    Accumulation order in loops is the caller's responsibility and must be
    fixed for determinism.
    """
    prod = a.raw * b.raw
    shift = (a.fmt.frac_bits + b.fmt.frac_bits) - acc.fmt.frac_bits
    prod = _rne_shift_right(prod, shift)
    return FxValue(_clamp(acc.raw + prod, acc.fmt), acc.fmt)


def fx_mul(a: FxValue, b: FxValue, out_fmt: FxFormat) -> FxValue:
    """Exact product rounded (RNE) and saturated into out_fmt."""
    prod = a.raw * b.raw
    shift = (a.fmt.frac_bits + b.fmt.frac_bits) - out_fmt.frac_bits
    return FxValue(_clamp(_rne_shift_right(prod, shift), out_fmt), out_fmt)


# ---------------------------------------------------------------------------
# Vectorised twins used by the quantized GRU path and the table sweeps.
# Semantics match the scalar ops bit for bit; int64 is safe because raws fit
# 32 bits, so products stay below 2**62.
# ---------------------------------------------------------------------------

def quantize_array(xs: np.ndarray, fmt: FxFormat) -> np.ndarray:
    """Vectorised quantize; returns int64 raw values."""
    xs = np.asarray(xs, dtype=np.float64)
    if np.isnan(xs).any():
        raise ValueError("cannot quantize NaN")
    scaled = xs * float(1 << fmt.frac_bits)
    rounded = np.rint(scaled)  # rint is round-half-to-even
    return np.clip(rounded, fmt.raw_min, fmt.raw_max).astype(np.int64)


def dequantize_array(raws: np.ndarray, fmt: FxFormat) -> np.ndarray:
    return np.asarray(raws, dtype=np.float64) * fmt.ulp


def rne_shift_right_array(v: np.ndarray, shift: int) -> np.ndarray:
    if shift <= 0:
        return v << (-shift)
    q = v >> shift
    rem = v & ((np.int64(1) << shift) - 1)
    half = np.int64(1) << (shift - 1)
    round_up = (rem > half) | ((rem == half) & ((q & 1) == 1))
    return q + round_up.astype(np.int64)


def clamp_array(v: np.ndarray, fmt: FxFormat) -> np.ndarray:
    return np.clip(v, fmt.raw_min, fmt.raw_max)
