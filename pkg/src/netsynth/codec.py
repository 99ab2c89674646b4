"""Per-cube Taylor tables, the correction-digit codec, and its network decoder.

Derivative values on the fine grid are compressed one coarse cell at a time:
walk the fine knots of the cell in a snake order (consecutive knots
adjacent), predict each knot's coefficients from the previous knot by the
exact polynomial shift rule, and store only a small integer correction per
coefficient order.  Corrections are bounded by 3 in absolute value whenever
the target lies in the declared smoothness ball, so each order's correction
sequence packs into a single base-7 scalar.  Decoding replays the same
recurrence; the network decoder does it with one ramp-gate digit extractor
per order and affine updates, and is shared by all cells.
"""

from __future__ import annotations

from dataclasses import dataclass

from gmpy2 import mpq

from .errors import NetsynthError, SmoothnessPromiseViolation
from .gadgets import DigitStream, bit_extractor_exprs, encode_digits
from .network import Expr, NetBuilder, Network
from .oracles import FunctionOracle, mi_factorial, multi_indices
from .scalars import den, num, rat, rat_ceil, rat_round_half_down, scale_power

__all__ = [
    "TaylorTable",
    "EncodingWeight",
    "taylor_table",
    "cube_knots",
    "knot_traversal",
    "transfer_coeffs",
    "encode_cube",
    "decode_cube",
    "build_decoder_net",
    "coeff_tolerance",
    "taylor_orders",
]


def taylor_orders(d: int, r) -> list:
    """Multi-index orders |k| <= ceil(r) - 1 carried by the codec."""
    return multi_indices(d, int(rat_ceil(rat(r))) - 1)


def coeff_tolerance(M: int, k, r) -> mpq:
    """Accuracy target M^(|k|-r) for an order-k coefficient."""
    return scale_power(M, sum(k) - rat(r))


@dataclass
class TaylorTable:
    """Exact derivative values a[(m, k)] = D^k f(m/M) over a knot region."""

    M: int
    r: mpq
    d: int
    entries: dict

    def value(self, m, k) -> mpq:
        return self.entries[(tuple(m), tuple(k))]


def taylor_table(f: FunctionOracle, M: int, region) -> TaylorTable:
    """Tabulate oracle derivatives at every fine knot of the region."""
    orders = taylor_orders(f.d, f.r)
    entries = {}
    for m in region:
        m = tuple(m)
        x = [rat(mi, M) for mi in m]
        for k in orders:
            entries[(m, k)] = f.derivative(k, x)
    return TaylorTable(M=M, r=rat(f.r), d=f.d, entries=entries)


def cube_knots(n, N: int, M: int, d: int):
    """Fine knots of the coarse cell around n/N (edge 2/N), snake order."""
    return knot_traversal(n, N, M, d)


def _snake(dims):
    if len(dims) == 1:
        for i in range(dims[0]):
            yield (i,)
        return
    sub = list(_snake(dims[1:]))
    for i in range(dims[0]):
        block = sub if i % 2 == 0 else reversed(sub)
        for t in block:
            yield (i,) + t


def knot_traversal(n, N: int, M: int, d: int):
    """Snake enumeration of the (2M/N+1)^d fine knots of the cell at n/N.

    Consecutive knots differ by 1 in exactly one coordinate; the relative
    pattern is identical for every cell, which lets one decoder network
    serve all of them.  The first knot is the lexicographically smallest.
    """
    if M % N != 0:
        raise NetsynthError("fine scale must be divisible by the coarse scale")
    s = M // N
    n = tuple(n)
    if len(n) != d:
        raise NetsynthError("cell knot dimension mismatch")
    lo = [ni * s - s for ni in n]
    side = 2 * s + 1
    return [tuple(lo[i] + off[i] for i in range(d)) for off in _snake([side] * d)]


def transfer_coeffs(coeffs: dict, axis: int, step: int, M: int, r) -> dict:
    """Shift approximate coefficients to an adjacent knot (step = +-1 along
    axis) by the exact polynomial Taylor-shift rule."""
    if step not in (-1, 1):
        raise NetsynthError("knots must be adjacent (unit step)")
    kmax = int(rat_ceil(rat(r))) - 1
    h = rat(step, M)
    out = {}
    for k in coeffs:
        acc = rat(0)
        hp = rat(1)
        fact = 1
        for n in range(kmax - sum(k) + 1):
            k2 = list(k)
            k2[axis] += n
            acc = acc + coeffs[tuple(k2)] / fact * hp
            hp = hp * h
            fact *= n + 1
        out[k] = acc
    return out


@dataclass
class EncodingWeight:
    """Per-cell encoding: one base-7 correction stream and one exact initial
    coefficient per order, plus enough context to decode."""

    n: tuple
    N: int
    M: int
    r: mpq
    d: int
    initials: dict  # order k -> exact rational initial coefficient
    streams: dict  # order k -> DigitStream (digit = correction + 3)

    def packed_scalars(self) -> dict:
        return {k: encode_digits(s) for k, s in self.streams.items()}

    def to_jsonable(self) -> dict:
        return {
            "n": list(self.n),
            "N": self.N,
            "M": self.M,
            "r": f"{num(self.r)}/{den(self.r)}",
            "d": self.d,
            "initials": {
                ",".join(map(str, k)): f"{num(v)}/{den(v)}"
                for k, v in sorted(self.initials.items())
            },
            "streams": {
                ",".join(map(str, k)): "".join(str(g) for g in s.digits)
                for k, s in sorted(self.streams.items())
            },
        }

    @staticmethod
    def from_jsonable(doc: dict) -> "EncodingWeight":
        def key(s):
            return tuple(int(v) for v in s.split(","))

        from .scalars import rat_from_str

        return EncodingWeight(
            n=tuple(doc["n"]),
            N=doc["N"],
            M=doc["M"],
            r=rat_from_str(doc["r"]),
            d=doc["d"],
            initials={key(k): rat_from_str(v) for k, v in doc["initials"].items()},
            streams={
                key(k): DigitStream(7, tuple(int(c) for c in s))
                for k, s in doc["streams"].items()
            },
        )


def _step_of(prev, cur):
    diff = [c - p for p, c in zip(prev, cur)]
    axes = [i for i, v in enumerate(diff) if v != 0]
    if len(axes) != 1 or abs(diff[axes[0]]) != 1:
        raise NetsynthError("traversal steps must move to an adjacent knot")
    return axes[0], diff[axes[0]]


def encode_cube(table: TaylorTable, n, N: int, M: int, r,
                quantize_initials: bool = False) -> EncodingWeight:
    """Compress the cell's exact coefficient table into correction streams.

    Walks the snake traversal; at each step the transferred prediction is
    corrected by an integer multiple of the order's tolerance.  A correction
    beyond +-3 means the table cannot come from a unit-ball function on the
    extended domain and is reported as a promise violation.  When two
    corrections tie, the smaller integer wins (determinism).

    ``quantize_initials`` additionally rounds the initial coefficients to a
    2^-(ceil(log2 M)+4) grid; experimental, for information accounting only.
    """
    rr = rat(r)
    d = table.d
    orders = taylor_orders(d, rr)
    tol = {k: coeff_tolerance(M, k, rr) for k in orders}
    path = knot_traversal(n, N, M, d)
    approx = {k: table.value(path[0], k) for k in orders}
    if quantize_initials:
        step = rat(1, 2 ** ((M - 1).bit_length() + 4))
        approx = {k: rat_round_half_down(v / step) * step for k, v in approx.items()}
    initials = dict(approx)
    digits = {k: [] for k in orders}
    for prev, cur in zip(path, path[1:]):
        axis, step = _step_of(prev, cur)
        pred = transfer_coeffs(approx, axis, step, M, rr)
        for k in orders:
            target = table.value(cur, k)
            b = rat_round_half_down((target - pred[k]) / tol[k])
            if abs(b) > 3:
                raise SmoothnessPromiseViolation(
                    f"correction {b} for order {k} at knot {cur} exceeds 3; "
                    "oracle violates its declared smoothness ball"
                )
            digits[k].append(int(b) + 3)
            approx[k] = pred[k] + tol[k] * b
        approx = {k: approx[k] for k in orders}
    streams = {k: DigitStream(7, tuple(ds)) for k, ds in digits.items()}
    return EncodingWeight(tuple(n), N, M, rr, d, initials, streams)


def decode_cube(enc: EncodingWeight) -> dict:
    """Replay the encoder recurrence; exact inverse by construction.

    Returns approximate coefficients keyed by (knot, order), satisfying
    |a - a_hat| <= M^(|k|-r) at every knot whenever encoding succeeded.
    """
    rr = enc.r
    orders = taylor_orders(enc.d, rr)
    tol = {k: coeff_tolerance(enc.M, k, rr) for k in orders}
    path = knot_traversal(enc.n, enc.N, enc.M, enc.d)
    for k in orders:
        if len(enc.streams[k]) != len(path) - 1:
            raise NetsynthError("stream length does not match the traversal")
    approx = dict(enc.initials)
    out = {(path[0], k): approx[k] for k in orders}
    for t, (prev, cur) in enumerate(zip(path, path[1:])):
        axis, step = _step_of(prev, cur)
        pred = transfer_coeffs(approx, axis, step, enc.M, rr)
        for k in orders:
            b = enc.streams[k].digits[t] - 3
            approx[k] = pred[k] + tol[k] * b
            out[(cur, k)] = approx[k]
    return out


def build_decoder_net(N: int, M: int, r, d: int) -> Network:
    """ReLU network mapping a cell's encoding scalars to all approximate
    coefficients along the traversal; cell-independent and exact in
    rational mode (matches :func:`decode_cube` bit for bit).

    Inputs (in order): one initial per order, then one packed correction
    scalar per order.  Outputs: coefficients in traversal-major,
    order-minor sequence.
    """
    rr = rat(r)
    orders = taylor_orders(d, rr)
    tol = {k: coeff_tolerance(M, k, rr) for k in orders}
    # relative traversal: same steps for every cell
    path = knot_traversal(tuple(1 for _ in range(d)), N, M, d)
    T = len(path) - 1
    b = NetBuilder(2 * len(orders))
    init_exprs = {k: b.x(i) for i, k in enumerate(orders)}
    digit_exprs = {}
    for i, k in enumerate(orders):
        if T > 0:
            digit_exprs[k] = bit_extractor_exprs(b, b.x(len(orders) + i), 7, T)
        else:
            digit_exprs[k] = []
    kmax = int(rat_ceil(rr)) - 1
    approx = dict(init_exprs)
    outputs = [approx[k] for k in orders]
    for t, (prev, cur) in enumerate(zip(path, path[1:])):
        axis, step = _step_of(prev, cur)
        h = rat(step, M)
        nxt = {}
        for k in orders:
            acc = Expr.constant(0)
            hp = rat(1)
            fact = 1
            for nn in range(kmax - sum(k) + 1):
                k2 = list(k)
                k2[axis] += nn
                acc = acc + approx[tuple(k2)] * (hp / fact)
                hp = hp * h
                fact *= nn + 1
            # materialize each updated coefficient: the recurrence then has
            # constant in-degree and the network size stays linear in the
            # traversal length
            nxt[k] = b.register_signed(acc + (digit_exprs[k][t] - 3) * tol[k])
        approx = nxt
        outputs.extend(approx[k] for k in orders)
    meta = {
        "kind": "taylor-decoder",
        "N": N,
        "M": M,
        "r": rr,
        "d": d,
        "orders": [list(k) for k in orders],
        "traversal_len": len(path),
    }
    return b.finish(outputs, meta=meta)
