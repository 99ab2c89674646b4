"""Reusable ReLU subnetworks: ramps, approximate squaring/multiplication,
binary gating, and sequential digit extraction from packed scalars.

The squaring gadget is the iterated-sawtooth refinement of x^2: with n
refinement stages the error is exactly 2**(-2n-2) and the endpoints are
exact.  Digit packing appends a half-step guard tail so that every partial
value stays clear of the ramp zones and extraction becomes bit-exact rather
than approximate.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import GuardMarginError, NetsynthError
from .network import Expr, NetBuilder, Network
from .scalars import RAT, den, num, rat

__all__ = [
    "DigitStream",
    "encode_digits",
    "build_threshold",
    "threshold_exprs",
    "build_square",
    "square_exprs",
    "square_stages_for",
    "build_product",
    "product_exprs",
    "build_bit_extractor",
    "bit_extractor_exprs",
    "gate_binary_exprs",
]


def ceil_log2_inv(eps) -> int:
    """Smallest L with 2**L >= 1/eps, for rational eps in (0,1]."""
    e = rat(eps)
    if not (0 < e <= 1):
        raise NetsynthError("eps must lie in (0,1]")
    L = 0
    while (1 << L) * num(e) < den(e):
        L += 1
    return L


# ---------------------------------------------------------------------------
# Threshold ramp


def threshold_exprs(b: NetBuilder, w: Expr, delta, theta) -> Expr:
    d = rat(delta)
    if d <= 0:
        raise NetsynthError("ramp width must be positive")
    t = rat(theta)
    inv = 1 / d
    return b.relu(w - t) * inv - b.relu(w - t - d) * inv


def build_threshold(delta, theta) -> Network:
    """0 for w <= theta, 1 for w >= theta + delta, linear ramp between."""
    b = NetBuilder(1)
    out = threshold_exprs(b, b.x(0), delta, theta)
    return b.finish(out, meta={"kind": "threshold", "delta": rat(delta), "theta": rat(theta)})


# ---------------------------------------------------------------------------
# Squaring and multiplication


def square_stages_for(eps) -> int:
    L = ceil_log2_inv(eps)
    return max(1, -(-(L - 2) // 2) + 1)


def _sawtooth(b: NetBuilder, t: Expr) -> Expr:
    # 2t on [0,1/2], 2(1-t) on [1/2,1], clamped to 0 outside [0,1]
    return b.relu(t) * 2 - b.relu(t - rat(1, 2)) * 4 + b.relu(t - 1) * 2


def square_exprs(b: NetBuilder, x: Expr, stages: int) -> Expr:
    """Approximation of x^2 on [0,1]; sup error exactly 2**(-2*stages-2)."""
    acc = x
    g = x
    scale = rat(1)
    for _ in range(stages):
        g = _sawtooth(b, g)
        scale = scale / 4
        acc = acc - g * scale
    return acc


def build_square(eps) -> Network:
    """ReLU net s with sup_{[0,1]} |s(x) - x^2| <= eps; s(0)=0, s(1)=1 exactly."""
    e = rat(eps)
    if not (0 < e < 1):
        raise NetsynthError("eps must lie in (0,1)")
    n = square_stages_for(e)
    b = NetBuilder(1)
    out = square_exprs(b, b.x(0), n)
    return b.finish(out, meta={"kind": "square", "eps": e, "stages": n})


def _abs_expr(b: NetBuilder, v: Expr) -> Expr:
    return b.relu(v) + b.relu(-v)


def product_exprs(b: NetBuilder, x: Expr, y: Expr, eps, bound, bound_y=None) -> Expr:
    """Approximate x*y with error <= eps for |x| <= bound, |y| <= bound_y
    (bound_y defaults to bound).

    Uses the quarter-difference of squares, x*y = ((x+y)^2 - (x-y)^2)/4,
    with each factor rescaled by its own bound so the squares act on [0,1];
    per-factor rescaling keeps the required square accuracy at
    eps/(2*Bx*By) rather than paying for the looser of the two bounds twice.
    """
    Bx = rat(bound)
    By = rat(bound_y) if bound_y is not None else Bx
    if Bx <= 0 or By <= 0:
        raise NetsynthError("bounds must be positive")
    stages = square_stages_for(rat(eps) / (2 * Bx * By))
    u = _abs_expr(b, x * (1 / (2 * Bx)) + y * (1 / (2 * By)))
    v = _abs_expr(b, x * (1 / (2 * Bx)) - y * (1 / (2 * By)))
    return (square_exprs(b, u, stages) - square_exprs(b, v, stages)) * (Bx * By)


def build_product(eps, bound) -> Network:
    """2-input net with |p(x,y) - x*y| <= eps on the square of side 2*bound."""
    b = NetBuilder(2)
    out = product_exprs(b, b.x(0), b.x(1), eps, bound)
    return b.finish(
        out, meta={"kind": "product", "eps": rat(eps), "bound": rat(bound)}
    )


# ---------------------------------------------------------------------------
# Binary gating (exact product with a {0,1} signal)


def gate_binary_exprs(b: NetBuilder, bit: Expr, value: Expr, bound) -> Expr:
    """Exact bit*value for bit in {0,1} and |value| <= bound: one relu via
    max(0, 2*bit + value/bound - 1) - bit, rescaled."""
    B = rat(bound)
    return (b.relu(bit * 2 + value * (1 / B) - 1) - bit) * B


# ---------------------------------------------------------------------------
# Digit streams and sequential extraction


@dataclass(frozen=True)
class DigitStream:
    """Digits in [0, base-1], most significant first."""

    base: int
    digits: tuple

    def __post_init__(self):
        if self.base < 2:
            raise NetsynthError("base must be >= 2")
        if len(self.digits) < 1:
            raise NetsynthError("a stream carries at least one digit")
        if any(not (0 <= g < self.base) for g in self.digits):
            raise NetsynthError("digit out of range")

    def __len__(self):
        return len(self.digits)


def encode_digits(stream: DigitStream) -> RAT:
    """Pack digits into one scalar: sum(base^-t * d_t) + guard tail
    base^-(T+1)/2.  The tail keeps every partial value at distance at least
    base^-(T+1)/2 from the integers, which makes extraction exact."""
    T = len(stream)
    base = stream.base
    w = rat(0)
    p = rat(1)
    for g in stream.digits:
        p = p / base
        w = w + p * g
    return w + p / (2 * base)


def bit_extractor_exprs(b: NetBuilder, w: Expr, base: int, T: int, delta=None):
    """Digit expressions for a packed scalar; exact in rational mode.

    Recurrence: v = base*w_t; digit_t = sum of unit ramps centered at
    1..base-1; w_{t+1} = v - digit_t.  An explicit delta must satisfy
    delta < base^-T / 4; by default each step uses the widest ramp its own
    guard margin allows (base^-(T-t+1)/8), which keeps the ramp weights as
    small as possible.
    """
    guard = rat(1, 4) / rat(base) ** T
    if delta is not None:
        delta = rat(delta)
        if not (0 < delta < guard):
            raise GuardMarginError(
                f"ramp width {delta} violates the margin base^-T/4 = {guard}"
            )
    digits = []
    cur = w
    for t in range(T):
        v = cur * base
        dt = delta if delta is not None else rat(1, 8) / rat(base) ** (T - t)
        dig = Expr.constant(0)
        for k in range(1, base):
            dig = dig + threshold_exprs(b, v, dt, rat(k) - dt / 2)
        # materialize the digit and the remainder: keeps in-degrees constant
        # along the chain (the remainder is always positive by the guard)
        dig = b.register_nonneg(dig)
        digits.append(dig)
        if t + 1 < T:
            cur = b.register_nonneg(v - dig)
    return digits


def build_bit_extractor(base: int, T: int, delta=None) -> Network:
    """Network mapping an encode_digits value to its T digits, exactly."""
    b = NetBuilder(1)
    digits = bit_extractor_exprs(b, b.x(0), base, T, delta)
    return b.finish(digits, meta={"kind": "bit-extractor", "base": base, "T": T})
