"""Constant-width layered constructor: width exactly 2d+10, connections only
between adjacent layers, serial evaluation along the depth.

The network is a sequence of full relu ranks organized as named channels.
A signed signal rides on a channel as ``value + offset`` with the rational
offset tracked outside the net, so relu pass-through is exact.  Per
residue-class subgrid the machine selects the coarse knot and the cell's
single packed coefficient stream, then walks the cell's fine knots decoding
every Taylor coefficient afresh (most significant bit first) and
accumulating hat-times-polynomial products through the shared
multiplication workspace; subgrid results blend under the filter partition
of unity into the accumulator channel.

Scales are powers of two, which makes every weight a dyadic rational and
keeps exact rational evaluation cheap.
"""

from __future__ import annotations

from itertools import product as iproduct
from math import ceil, log2

from ..codec import knot_traversal, taylor_orders
from ..errors import InfeasibleBudget, NetsynthError, WidthBudgetError
from ..gadgets import DigitStream, encode_digits, square_stages_for
from ..network import Expr, NetBuilder, Network
from ..oracles import FunctionOracle
from ..partition import patch_knots, subgrid_knots
from ..scalars import rat, rat_ceil

__all__ = ["build_fixed_width", "assert_standard_layered", "fixed_width_scales"]

COEFF_RANGE = rat(2)  # decoded coefficients live in [-2, 2]


# ---------------------------------------------------------------------------
# Layered channel machine


class ChannelMachine:
    """Strictly layered relu network of a fixed width.

    ``step`` emits one full layer: channels with a recipe compute, occupied
    channels without one carry, empty channels pad with zero units.  Every
    layer therefore has exactly ``width`` units, and a unit only ever reads
    the previous layer.
    """

    def __init__(self, builder: NetBuilder, width: int):
        self.b = builder
        self.width = width
        self.layer = 0
        self.layer_of = {}
        d = builder.input_dim
        if width < d + 2:
            raise WidthBudgetError("width too small for the input dimension")
        self._raw = [builder.x(i) if i < d else None for i in range(width)]
        self._off = [rat(0)] * width
        self._lo = [rat(0)] * width
        self._hi = [rat(1) if i < d else rat(0) for i in range(width)]

    def logical(self, ch: int) -> Expr:
        raw = self._raw[ch] if self._raw[ch] is not None else Expr.constant(0)
        return raw - self._off[ch]

    def A(self, terms, const=0, bounds=None):
        """Exact affine carry: the value rides above a tracked offset, so no
        nonlinearity is applied (requires the declared/derived lower bound
        to be genuine)."""
        return ("affine", dict(terms), rat(const), bounds)

    def R(self, terms, const=0, hi=None):
        """True rectification: channel := max(0, affine)."""
        return ("relu", dict(terms), rat(const), hi)

    def step(self, recipes: dict):
        if len(recipes) > self.width:
            raise WidthBudgetError("more recipes than channels")
        prev_raw, prev_off = self._raw, self._off
        prev_lo, prev_hi = self._lo, self._hi
        new_off = [rat(0)] * self.width
        new_lo = [rat(0)] * self.width
        new_hi = [rat(0)] * self.width
        self.layer += 1
        first_uid = self.b.input_dim + len(self.b._units)
        for ch in range(self.width):
            rec = recipes.get(ch)
            if rec is None:
                rec = ("carry",) if prev_raw[ch] is not None else ("zero",)
            kind = rec[0]
            if kind == "zero":
                self.b.relu(Expr.constant(0))
            elif kind == "carry":
                src = rec[1] if len(rec) > 1 else ch
                if prev_raw[src] is None:
                    raise NetsynthError(f"carry from empty channel {src}")
                self.b.relu(prev_raw[src])
                new_off[ch] = prev_off[src]
                new_lo[ch], new_hi[ch] = prev_lo[src], prev_hi[src]
            elif kind == "affine":
                _, terms, const, declared = rec
                e = Expr.constant(rat(const))
                lo = hi = rat(const)
                for src, cw in terms.items():
                    cw = rat(cw)
                    if prev_raw[src] is None:
                        raise NetsynthError(f"affine reads empty channel {src}")
                    e = e + (prev_raw[src] - prev_off[src]) * cw
                    a, bnd = prev_lo[src] * cw, prev_hi[src] * cw
                    lo, hi = lo + min(a, bnd), hi + max(a, bnd)
                if declared is not None:
                    lo = max(lo, rat(declared[0]))
                    hi = min(hi, rat(declared[1]))
                if hi < lo:
                    raise NetsynthError("declared bounds exclude the derived ones")
                off = -lo if lo < 0 else rat(0)
                self.b.relu(e + off)
                new_off[ch] = off
                new_lo[ch], new_hi[ch] = lo, hi
            elif kind == "relu":
                _, terms, const, hi_decl = rec
                e = Expr.constant(rat(const))
                lo = hi = rat(const)
                for src, cw in terms.items():
                    cw = rat(cw)
                    if prev_raw[src] is None:
                        raise NetsynthError(f"relu reads empty channel {src}")
                    e = e + (prev_raw[src] - prev_off[src]) * cw
                    a, bnd = prev_lo[src] * cw, prev_hi[src] * cw
                    lo, hi = lo + min(a, bnd), hi + max(a, bnd)
                self.b.relu(e)
                new_lo[ch] = max(lo, rat(0))
                new_hi[ch] = max(hi, rat(0))
                if hi_decl is not None:
                    new_hi[ch] = min(new_hi[ch], rat(hi_decl))
            else:
                raise NetsynthError(f"unknown recipe {kind!r}")
        for j in range(self.width):
            self.layer_of[first_uid + j] = self.layer
        self._raw = [Expr({first_uid + j: rat(1)}, 0) for j in range(self.width)]
        self._off, self._lo, self._hi = new_off, new_lo, new_hi


def assert_standard_layered(net: Network):
    """Check the standard architecture: a unit in layer L reads layer L-1."""
    for u in net.units:
        if u.idx in net.outputs:
            continue
        lay = net.layer_of[u.idx]
        for src, _w in u.incoming:
            src_lay = 0 if src < net.input_dim else net.layer_of[src]
            if src_lay != lay - 1:
                raise NetsynthError(
                    f"unit {u.idx} in layer {lay} reads layer {src_lay}"
                )


# ---------------------------------------------------------------------------
# Machine-level gadgets


def _neg(aff):
    terms, const = aff
    return {k: -v for k, v in terms.items()}, -const


def _mm_hat_acc(m: ChannelMachine, target: int, y_affs, weight, scratch):
    """target += weight * hat(y) for y given as affine payloads; d <= 2."""
    d = len(y_affs)
    if d == 1:
        s1, s2 = scratch[0], scratch[1]
        (t1, c1) = y_affs[0]
        m.step({s1: m.R(t1, c1), s2: m.R(*_neg(y_affs[0]))})
        m.step({
            s1: m.R({s1: -1, s2: -1}, 1, hi=1),
            s2: ("zero",),
        })
        hat = s1
    else:
        s1, s2, s3, s4 = scratch[:4]
        m.step({
            s1: m.R(*y_affs[0]),
            s2: m.R(*y_affs[1]),
            s3: m.R(*_neg(y_affs[0])),
            s4: m.R(*_neg(y_affs[1])),
        })
        # max(0,y1,y2) = (y1)+ + relu((y2)+ - (y1)+); same for the negatives
        m.step({
            s2: m.R({s2: 1, s1: -1}),
            s4: m.R({s4: 1, s3: -1}),
        })
        m.step({
            s1: m.R({s1: -1, s2: -1, s3: -1, s4: -1}, 1, hi=1),
            s2: ("zero",), s3: ("zero",), s4: ("zero",),
        })
        hat = s1
    m.step({
        target: m.A({target: 1, hat: rat(weight)}),
        hat: ("zero",),
    })


def _mm_selector(m: ChannelMachine, target: int, N: int, assignments, scratch,
                 d: int):
    """target := hat-sum interpolant of the assignments, evaluated at x."""
    m.step({target: ("zero",)})
    for knot, value in assignments:
        y_affs = [({i: rat(N)}, rat(-knot[i])) for i in range(d)]
        _mm_hat_acc(m, target, y_affs, value, scratch)


def _mm_square_into(m: ChannelMachine, g: int, acc: int, ramps, stages: int):
    """acc := refined square of the [0,1] value initially on both g and acc.

    Two layers per stage; the acc update for stage s rides on stage s+1's
    ramp layer.  Ends with g and the ramps zeroed."""
    r1, r2 = ramps
    pending = None
    scale = rat(1)
    for _ in range(stages):
        rec = {r1: m.R({g: 1}, rat(-1, 2)), r2: m.R({g: 1}, -1)}
        if pending is not None:
            rec[acc] = m.R({acc: 1, g: -pending}, 0, hi=1)
        m.step(rec)
        m.step({
            g: m.R({g: 2, r1: -4, r2: 2}, 0, hi=1),
            r1: ("zero",), r2: ("zero",),
        })
        scale = scale / 4
        pending = scale
    m.step({
        acc: m.R({acc: 1, g: -pending}, 0, hi=1),
        g: ("zero",),
    })


def _mm_product_acc(m: ChannelMachine, out: int, x_aff, y_aff, eps, bx, by,
                    work):
    """out += x*y with |x| <= bx, |y| <= by, error <= eps.

    ``work`` is a 5-channel scratch list (the shared 4-channel product
    workspace plus whichever named channel is idle at the call site).
    """
    w1, w2, w3, w4, w5 = work
    bx, by = rat(bx), rat(by)
    stages = square_stages_for(rat(eps) / (2 * bx * by))
    (tx, cx), (ty, cy) = x_aff, y_aff
    hx, hy = 1 / (2 * bx), 1 / (2 * by)

    def comb(sign):
        terms = {}
        for k, v in tx.items():
            terms[k] = terms.get(k, 0) + rat(v) * hx
        for k, v in ty.items():
            terms[k] = terms.get(k, 0) + sign * rat(v) * hy
        return terms, rat(cx) * hx + sign * rat(cy) * hy

    u_aff, v_aff = comb(1), comb(-1)
    m.step({
        w1: m.R(*u_aff),
        w2: m.R(*_neg(u_aff)),
        w3: m.R(*v_aff),
        w4: m.R(*_neg(v_aff)),
    })
    # |u| lands on w1 (acc) and w2 (g); |v| parks on w3
    m.step({
        w1: m.R({w1: 1, w2: 1}, 0, hi=1),
        w2: m.R({w1: 1, w2: 1}, 0, hi=1),
        w3: m.R({w3: 1, w4: 1}, 0, hi=1),
        w4: ("zero",),
    })
    _mm_square_into(m, g=w2, acc=w1, ramps=(w4, w5), stages=stages)
    # second square: g on w2, acc stays on w3
    m.step({w2: m.R({w3: 1}, 0, hi=1)})
    _mm_square_into(m, g=w2, acc=w3, ramps=(w4, w5), stages=stages)
    s = bx * by
    m.step({
        out: m.A({out: 1, w1: s, w3: -s}),
        w1: ("zero",), w2: ("zero",), w3: ("zero",), w4: ("zero",),
        w5: ("zero",),
    })


# ---------------------------------------------------------------------------
# Scales and the quantizing per-knot codec


def fixed_width_scales(eps, r):
    """Dyadic scales N ~ eps^(-1/(2r)), M ~ eps^(-1/r), powers of two."""
    e = float(rat(eps))
    if not (0 < e < 1):
        raise InfeasibleBudget("accuracy must lie in (0,1)")
    rr = float(rat(r))
    N = 1 << max(1, ceil(log2(e ** (-1.0 / (2 * rr))) - 1e-9))
    M = 1 << max(2, ceil(log2(e ** (-1.0 / rr)) - 1e-9))
    M = max(M, 2 * N)
    return N, M


def _coeff_bits(M: int, k, r) -> int:
    tol = float(M) ** (sum(k) - float(rat(r)))
    return max(2, ceil(log2(2 * float(COEFF_RANGE) / tol)))


def _encode_cell_stream(f: FunctionOracle, n, N, M, orders, bits_per):
    """One packed scalar per cell: traversal-major, order-minor, MSB-first."""
    bits = []
    for knot in knot_traversal(n, N, M, f.d):
        x = [rat(mi, M) for mi in knot]
        for k in orders:
            a = f.derivative(k, x)
            if abs(a) >= COEFF_RANGE:
                raise NetsynthError("coefficient outside the declared range")
            Kb = bits_per[k]
            u = (a + COEFF_RANGE) / (2 * COEFF_RANGE)
            idx = min(2**Kb - 1, int(u * 2**Kb))
            bits.extend((idx >> (Kb - 1 - j)) & 1 for j in range(Kb))
    return encode_digits(DigitStream(2, tuple(bits))), len(bits)


# ---------------------------------------------------------------------------
# Builder


def build_fixed_width(f: FunctionOracle, eps, _probe=None) -> Network:
    """Width-(2d+10) standard layered net with sup error ~ eps (up to the
    logarithmic slack of the serial per-knot decoding).  d <= 2, r <= 2."""
    d, r = f.d, f.r
    if d > 2:
        raise NetsynthError("constant-width builder supports d <= 2")
    kmax = int(rat_ceil(rat(r))) - 1
    if kmax > 1:
        raise NetsynthError("constant-width builder supports r <= 2")
    N, M = fixed_width_scales(eps, r)
    s = M // N
    orders = taylor_orders(d, r)
    bits_per = {k: _coeff_bits(M, k, r) for k in orders}
    rel_path = knot_traversal((1,) * d, N, M, d)
    streams = {}
    total_bits = 0
    for n in iproduct(range(N + 1), repeat=d):
        streams[n], total_bits = _encode_cell_stream(f, n, N, M, orders, bits_per)

    H = 2 * d + 10
    X = list(range(d))
    ACC = d
    WREG = d + 1
    DIG = d + 2
    CVAL = d + 3
    PROD = [d + 4, d + 5, d + 6, d + 7]
    COORD = [d + 8 + i for i in range(d)]
    SPK = 2 * d + 8  # hat scratch / per-knot polynomial accumulator
    FQ = 2 * d + 9

    n_path_gadgets = kmax + 2
    gadget_eps = rat(1, M ** int(rat_ceil(rat(r)))) / (10 * n_path_gadgets)
    b = NetBuilder(d)
    m = ChannelMachine(b, H)

    def decode_coeff(Kb, consumed):
        """CVAL := next coefficient from the stream on WREG (Kb bits)."""
        m.step({
            CVAL: m.A({}, -COEFF_RANGE + COEFF_RANGE * rat(2) ** -Kb,
                      (-COEFF_RANGE, COEFF_RANGE)),
            DIG: ("zero",),
        })
        for j in range(Kb):
            pos = consumed + j
            delta = rat(1, 8) * rat(1, 2) ** (total_bits - pos - 1)
            theta = 1 - delta / 2
            m.step({
                DIG: m.R({WREG: 2}, -theta),
                PROD[0]: m.R({WREG: 2}, -theta - delta),
            })
            inv = 1 / delta
            m.step({
                DIG: m.R({DIG: inv, PROD[0]: -inv}, 0, hi=1),
                WREG: m.R({WREG: 2, DIG: -inv, PROD[0]: inv}, 0, hi=1),
                PROD[0]: ("zero",),
            })
            m.step({
                CVAL: m.A({CVAL: 1, DIG: 2 * COEFF_RANGE * rat(2) ** -(j + 1)},
                          0, (-COEFF_RANGE, COEFF_RANGE)),
                DIG: ("zero",),
            })
        return consumed + Kb

    blk_bound = COEFF_RANGE * (1 + 3 * d)
    probes = []

    def probe(tag, ch):
        if _probe is not None and tag in _probe:
            probes.append((tag, m.logical(ch)))

    for q in iproduct(range(3), repeat=d):
        knots_q = subgrid_knots(q, N, d)

        def assignments_for(values):
            out = {}
            for knot, v in zip(knots_q, values):
                for pk in patch_knots(knot, N, d):
                    out[pk] = v
            return sorted(out.items())

        for i in range(d):
            _mm_selector(m, COORD[i], N,
                         assignments_for([rat(k[i]) for k in knots_q]), PROD, d)
        _mm_selector(m, WREG, N,
                     assignments_for([streams[k] for k in knots_q]), PROD, d)
        m.step({FQ: ("zero",), SPK: ("zero",)})

        probe("wreg_sel", WREG)
        probe("coord_sel", COORD[0])
        consumed = 0
        for rel in rel_path:
            m.step({SPK: ("zero",)})
            for k in orders:
                consumed = decode_coeff(bits_per[k], consumed)
                probe("cval", CVAL)
                if sum(k) == 0:
                    m.step({SPK: m.A({SPK: 1, CVAL: 1})})
                else:
                    axis = k.index(1)
                    off_aff = ({X[axis]: 1, COORD[axis]: rat(-1, N)},
                               rat(-(rel[axis] - s), M))
                    _mm_product_acc(m, SPK, ({CVAL: 1}, 0), off_aff,
                                    gadget_eps, COEFF_RANGE, rat(3),
                                    PROD + [DIG])
            # hat at this fine knot, parked on DIG
            y_affs = [
                ({X[i]: rat(M), COORD[i]: rat(-s)}, rat(s - rel[i]))
                for i in range(d)
            ]
            m.step({DIG: ("zero",)})
            _mm_hat_acc(m, DIG, y_affs, 1, PROD)
            probe("hat", DIG)
            _mm_product_acc(m, FQ, ({DIG: 1}, 0), ({SPK: 1}, 0), gadget_eps,
                            rat(1), blk_bound, PROD + [CVAL])
            probe("fq", FQ)
        # subgrid filter: ones at the subgrid knots themselves
        _mm_selector(m, SPK, N, [(k, rat(1)) for k in knots_q], PROD, d)
        probe("w_q", SPK)
        _mm_product_acc(m, ACC, ({SPK: 1}, 0), ({FQ: 1}, 0), gadget_eps,
                        rat(1), blk_bound + 1, PROD + [CVAL])
        probe("acc", ACC)

    out = m.logical(ACC)
    readout_layer = m.layer + 1
    if _probe is not None:
        extra = [e for _tag, e in probes]
        lay = {**m.layer_of}
        first = b.input_dim + len(b._units)
        for j in range(1 + len(extra)):
            lay[first + j] = readout_layer
        net = b.finish([out] + extra, meta={"probe_tags": [t for t, _ in probes]},
                       layer_of=lay)
        return net
    readout_id = b.input_dim + len(b._units)
    meta = {
        "variant": "fixed_width",
        "d": d,
        "r": r,
        "eps": rat(eps),
        "N": N,
        "M": M,
        "fn": f.fid,
        "width": H,
        "enc_weights": (N + 1) ** d,
        "bits_per_enc": total_bits,
        "gadget_eps": gadget_eps,
        "channel_map": {
            "x": X, "accumulator": ACC, "stream": WREG, "bit": DIG,
            "coeff": CVAL, "product_ws": PROD, "coords": COORD,
            "poly_acc": SPK, "cell_sum": FQ,
        },
    }
    return b.finish(out, meta=meta,
                    layer_of={**m.layer_of, readout_id: readout_layer})
