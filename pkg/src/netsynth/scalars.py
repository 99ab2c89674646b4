"""Exact scalar arithmetic: canonical rationals and fixed-precision big floats.

Weights and evaluation values are either exact rationals (gmpy2.mpq, which
keeps gcd-reduced canonical form automatically) or big floats at a declared
mantissa precision (gmpy2.mpfr).  Rational mode is bit-exact and fully
reproducible; big-float mode rounds every operation to the declared
precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import isqrt

import gmpy2
from gmpy2 import mpfr, mpq

from .errors import NetsynthError

__all__ = [
    "RAT",
    "rat",
    "rat_from_str",
    "rat_floor",
    "rat_ceil",
    "rat_round_half_down",
    "num",
    "den",
    "BigFloat",
    "RATIONAL",
    "FLOAT64",
    "bigfloat_context",
    "mpfr_to_exact_rational",
    "sqrt_below",
    "sqrt_above",
    "scale_power",
]

RAT = mpq

ZERO = mpq(0)
ONE = mpq(1)


def rat(x, y=None):
    """Build a canonical exact rational from int/str/Fraction/mpq input."""
    if y is not None:
        return mpq(x, y)
    if isinstance(x, (int, type(mpq(0).numerator))):
        return mpq(x)
    if isinstance(x, mpq):
        return x
    if isinstance(x, Fraction):
        return mpq(x.numerator, x.denominator)
    if isinstance(x, str):
        return rat_from_str(x)
    if isinstance(x, float):
        raise NetsynthError(
            f"refusing implicit float->rational conversion for {x!r}; "
            "pass a string or Fraction"
        )
    return mpq(x)


def rat_from_str(s):
    """Parse 'n', 'n/d' or a terminating decimal like '0.25' exactly."""
    s = s.strip()
    if "/" in s:
        n, d = s.split("/")
        return mpq(int(n), int(d))
    if "." in s or "e" in s or "E" in s:
        return mpq(Fraction(s).numerator, Fraction(s).denominator)
    return mpq(int(s))


def num(q):
    return int(q.numerator)


def den(q):
    return int(q.denominator)


def rat_floor(q):
    return num(q) // den(q)


def rat_ceil(q):
    return -((-num(q)) // den(q))


def rat_round_half_down(q):
    """Nearest integer; exact halves round toward the smaller integer."""
    f = rat_floor(q)
    frac = q - f
    if frac > mpq(1, 2):
        return f + 1
    return f


# ---------------------------------------------------------------------------
# Scalar modes


@dataclass(frozen=True)
class BigFloat:
    """Big-float mode with an explicit mantissa width (bits)."""

    mantissa_bits: int = 256

    def __post_init__(self):
        if self.mantissa_bits < 64:
            raise NetsynthError("big-float mode requires mantissa_bits >= 64")


RATIONAL = "rational"
FLOAT64 = "float64"


def bigfloat_context(mode: BigFloat):
    """gmpy2 context manager rounding every operation to mode's precision."""
    return gmpy2.context(precision=mode.mantissa_bits)


def mpfr_to_exact_rational(x) -> mpq:
    """Exact rational value of an mpfr (every finite mpfr is dyadic)."""
    if not gmpy2.is_finite(x):
        raise NetsynthError(f"cannot convert non-finite value {x!r}")
    m, e = x.as_mantissa_exp()
    m, e = int(m), int(e)
    if e >= 0:
        return mpq(m * (1 << e))
    return mpq(m, 1 << (-e))


# ---------------------------------------------------------------------------
# Exact auxiliary arithmetic


def sqrt_below(q, bits: int = 128) -> mpq:
    """Largest rational p/2^bits-grid value with p*p <= q.  q >= 0."""
    if q < 0:
        raise NetsynthError("sqrt of negative rational")
    n, d = num(q), den(q)
    # floor(sqrt(n/d) * 2^bits) = floor(sqrt(n * d * 4^bits) / d / 2^... )
    s = isqrt(n * d << (2 * bits))
    return mpq(s, d << bits)


def sqrt_above(q, bits: int = 128) -> mpq:
    """Rational upper bound on sqrt(q), one grid step above sqrt_below."""
    lo = sqrt_below(q, bits)
    if lo * lo == q:
        return lo
    return lo + mpq(1, den(q) << bits)


def scale_power(base: int, exponent) -> mpq:
    """Exact base**exponent for integer or half-integer exponents.

    Half-integer exponents require the base to be a perfect square; this is
    how tolerances like M**(|k|-r) stay exactly representable for
    half-integer smoothness (pick a square fine scale).
    """
    e = rat(exponent)
    if den(e) == 1:
        return mpq(base) ** num(e)
    if den(e) == 2:
        root = isqrt(base)
        if root * root != base:
            raise NetsynthError(
                f"half-integer power {e} of non-square scale {base} is not an "
                "exact rational; choose a perfect-square scale"
            )
        return mpq(root) ** num(e)
    raise NetsynthError(f"unsupported exponent {e}: only n/1 and n/2 exponents")
