"""Polynomial-activation constructors: sign-sharpening iterates, the
quadratic bit-reading dynamical system, and the deep-phase analogue built
entirely from squaring units.

Everything reduces to one primitive, the square: products come from the
quarter-difference polarization identity, the cubic sharpening map
u(t) = t*(3 - t^2)/2 from squares and one product, approximate relu from
t -> (t*u_n(t) + t)/2, and the bit reader iterates v(t) = 2 - 3*t^2 whose
trajectory visits [1/2, 1] or [-1, -1/2] according to the encoded bits.
The square itself is either a genuine degree-2 unit (default) or, for an
activation with a point of nonzero second derivative, a rescaled second
difference of that activation.
"""

from __future__ import annotations

from itertools import product as iproduct
from math import ceil, log, log2

from gmpy2 import mpq

from ..codec import encode_cube, knot_traversal, taylor_orders, taylor_table
from ..errors import NetsynthError
from ..network import Expr, NetBuilder, Network, SigmaSpec
from ..oracles import FunctionOracle, mi_factorial
from ..partition import Subgrid, patch_knots, subgrid_knots
from ..scalars import rat, rat_ceil, sqrt_above, sqrt_below
from .common import deep_scales
from .deep import validate_deep_rate

__all__ = [
    "PolyCore",
    "build_u_iterate",
    "approximate_relu_poly",
    "find_poly_interval",
    "certified_v_trajectory",
    "build_poly_activation",
]


# ---------------------------------------------------------------------------
# The squaring primitive and everything above it


class PolyCore:
    """Square-based expression toolkit inside one builder.

    ``curvature=(sigma, x0, second_deriv, delta)`` switches the squaring
    primitive to the second-difference gadget around a point where the
    activation has nonzero curvature; the default is an exact degree-2
    polynomial unit.
    """

    def __init__(self, b: NetBuilder, curvature=None):
        self.b = b
        self.curvature = curvature

    def sq(self, e: Expr) -> Expr:
        if self.curvature is None:
            return self.b.poly(e, (0, 0, 1))
        sigma, x0, dd, delta = self.curvature
        x0, dd, delta = rat(x0), rat(dd), rat(delta)
        up = self.b.periodic(e * delta + x0, sigma)
        dn = self.b.periodic(e * -delta + x0, sigma)
        mid = self.b.periodic(Expr.constant(x0), sigma)
        return (up + dn - mid * 2) * (1 / (dd * delta * delta))

    def mul(self, x: Expr, y: Expr) -> Expr:
        # polarization: 4xy = (x+y)^2 - (x-y)^2
        return (self.sq(x + y) - self.sq(x - y)) * rat(1, 4)

    def cube_map(self, e: Expr) -> Expr:
        """u(t) = (3t - t^3)/2, the sign-sharpening step."""
        if self.curvature is None:
            return self.b.poly(e, (0, rat(3, 2), 0, rat(-1, 2)))
        t3 = self.mul(e, self.sq(e))
        return e * rat(3, 2) - t3 * rat(1, 2)

    def u_iter(self, e: Expr, n: int) -> Expr:
        for _ in range(n):
            e = self.cube_map(e)
        return e

    def bit_map(self, e: Expr) -> Expr:
        """v(t) = 2 - 3t^2, the bit-reading step."""
        if self.curvature is None:
            return self.b.poly(e, (2, 0, -3))
        return 2 - self.sq(e) * 3

    def relu(self, e: Expr, bound, stages: int) -> Expr:
        """Approximate relu for |e| <= bound; error <= bound * 2^(-stages/2-1)."""
        B = rat(bound)
        t = e * (1 / B)
        return (self.mul(t, self.u_iter(t, stages)) + t) * (B / 2)

    def softclamp(self, e: Expr, bound, stages: int) -> Expr:
        """Clamp into [-3/2, 3/2] for |e| <= bound; near-identity on [-1,1].

        The clamp knees sit at +-3/2, half a unit away from the working
        range [-1,1], so the relu transition-zone error never touches the
        trajectory values; only out-of-range garbage sees it.
        """
        lo = self.relu(e - rat(3, 2), bound + 2, stages)
        hi = self.relu(-e - rat(3, 2), bound + 2, stages)
        return e - lo + hi

    def materialize(self, e: Expr) -> Expr:
        return self.b.identity(e)


def relu_stages_for(err_budget, bound) -> int:
    """Stages n with bound * 2^(-n/2-1) <= err_budget (worst-case bound,
    valid on the whole rescaled interval including the transition zone)."""
    need = float(bound) / (2 * float(err_budget))
    return max(2, 2 * ceil(log2(max(need, 2))))


def sharpen_stages_for(gap, target) -> int:
    """Iterations n with gap^(2^(n/2)) <= target, for gap in (0,1)."""
    expo = log(1 / float(target)) / log(1 / float(gap))
    return max(2, 2 * ceil(log2(max(expo, 2))) + 2)


def clamp_stages_for(margin, bound) -> int:
    """Stages for a soft clamp whose knees sit half a unit outside the
    working range: only the deep zone matters there, and its error decays
    like gap^(2^(n/2)) with gap = 1 - 1/(2B)."""
    B = float(bound) + 4
    return sharpen_stages_for(1 - 1 / (2 * B), float(margin) / B)


# ---------------------------------------------------------------------------
# Standalone networks


def build_u_iterate(n: int) -> Network:
    """Chain of degree-3 units computing the n-fold sharpening iterate."""
    if n < 1:
        raise NetsynthError("need at least one iterate")
    b = NetBuilder(1)
    core = PolyCore(b)
    return b.finish(core.u_iter(b.x(0), n), meta={"kind": "u-iterate", "n": n})


def approximate_relu_poly(n: int) -> Network:
    """Pure-polynomial approximation of relu on [-1,1]; sup error
    <= 2^(-n/2-1)."""
    if n < 1:
        raise NetsynthError("need at least one iterate")
    b = NetBuilder(1)
    core = PolyCore(b)
    x = b.x(0)
    out = (core.mul(x, core.u_iter(x, n)) + x) * rat(1, 2)
    return b.finish(out, meta={"kind": "poly-relu", "n": n})


# ---------------------------------------------------------------------------
# Bit-reading dynamics: seed intervals and certified trajectories


def _preimage_branch(lo, hi, bit, bits_prec):
    """Inward rational bounds of the branch preimage of [lo, hi] under
    v(t) = 2 - 3t^2; positive branch for bit 0, negative for bit 1."""
    a = (2 - hi) / 3
    c = (2 - lo) / 3
    qlo = sqrt_above(a, bits_prec)  # inward: lower endpoint rounded up
    qhi = sqrt_below(c, bits_prec)
    if bit == 0:
        return qlo, qhi
    return -qhi, -qlo


def find_poly_interval(bits, bits_prec: int = 160):
    """Seed interval of length >= 6^-n whose trajectory w_{k+1} = v(w_k)
    lands in [1/2,1] (bit 0) or [-1,-1/2] (bit 1) at every step."""
    bits = [int(v) for v in bits]
    if not bits or any(v not in (0, 1) for v in bits):
        raise NetsynthError("bits must be a nonempty 0/1 sequence")
    lo, hi = (rat(1, 2), rat(1)) if bits[-1] == 0 else (rat(-1), rat(-1, 2))
    for bit in reversed(bits[:-1]):
        lo, hi = _preimage_branch(lo, hi, bit, bits_prec)
    n = len(bits)
    if hi - lo < rat(1, 6) ** n:
        raise NetsynthError("interval construction lost the length guarantee")
    return lo, hi


def certified_v_trajectory(seed, n: int, prec_bits: int = 256):
    """Enclosures of the trajectory from an exact rational seed; endpoints
    dyadically outward-rounded each step so numbers stay small."""
    grid = rat(1) / (rat(2) ** prec_bits)

    def round_out(lo, hi):
        from ..scalars import rat_ceil as rc, rat_floor as rf

        return rf(lo / grid) * grid, rc(hi / grid) * grid

    lo = hi = rat(seed)
    out = [(lo, hi)]
    for _ in range(n - 1):
        # v is decreasing in |t|: bound via the monotone pieces
        cands = [2 - 3 * lo * lo, 2 - 3 * hi * hi]
        nlo, nhi = min(cands), max(cands)
        if lo <= 0 <= hi:
            nhi = rat(2)
        lo, hi = round_out(nlo, nhi)
        out.append((lo, hi))
    return out


def _stream_bits(enc, orders):
    """Interleave correction digits as 3-bit groups, traversal-major."""
    T = None
    bits = []
    for t in range(len(next(iter(enc.streams.values())).digits)):
        for k in orders:
            g = enc.streams[k].digits[t]
            bits.extend(((g >> 2) & 1, (g >> 1) & 1, g & 1))
    return bits


# ---------------------------------------------------------------------------
# The deep-phase analogue with squaring units


def build_poly_activation(f: FunctionOracle, p, W: int, curvature=None) -> Network:
    """Deep-phase construction with polynomial (or curvature-gadget) units:
    approximate-relu hats, single-weight-per-cell bit-reading dynamics, and
    exact polarization products.  d = 1."""
    d, r = f.d, f.r
    if d != 1:
        raise NetsynthError("polynomial-activation builder supports d = 1")
    validate_deep_rate(d, r, p, include_boundary=False)
    N, M = deep_scales(W, d, r, p)
    s = M // N
    orders = taylor_orders(d, r)
    K = len(orders)
    rel_path = knot_traversal((1,), N, M, d)
    T = len(rel_path)
    D = (T - 1) * K * 3  # trajectory length (bits per cell)
    kmax = int(rat_ceil(rat(r))) - 1
    from ..codec import coeff_tolerance

    tol = {k: coeff_tolerance(M, k, r) for k in orders}
    m_err = rat(1, M ** int(rat_ceil(rat(r))))  # lower bound on M^-r

    seeds = {}
    initials = {}
    for n in iproduct(range(N + 1), repeat=d):
        tab = taylor_table(f, M, knot_traversal(n, N, M, d))
        enc = encode_cube(tab, n, N, M, r)
        bits = _stream_bits(enc, orders)
        lo, hi = find_poly_interval(bits)
        seeds[n] = (lo + hi) / 2
        initials[n] = enc.initials

    b = NetBuilder(1)
    core = PolyCore(b, curvature=curvature)
    x = b.x(0)

    # accuracy policy
    spike_budget = m_err / 40
    relu_bound_N = rat(N + 3)
    stages_spike_N = relu_stages_for(spike_budget, relu_bound_N)
    relu_bound_M = rat(2 * s + 3)
    stages_spike_M = relu_stages_for(spike_budget, relu_bound_M)
    seed_margin = rat(1, 6) ** D / 8
    stages_clamp = clamp_stages_for(seed_margin, rat(3 * N + 8))
    stages_z = sharpen_stages_for(0.56, min(float(seed_margin) / (8 * N), 1e-3))
    bit_budget = min(m_err / (50 * T), rat(1, 1000))
    stages_bit = sharpen_stages_for(0.56, bit_budget)

    def poly_hat(y: Expr, bound, stages) -> Expr:
        """Approximate hat: relu(1 - relu(y) - relu(-y)), all polynomial."""
        inner = 1 - core.relu(y, bound, stages) - core.relu(-y, bound, stages)
        return core.relu(inner, bound + 2, stages)

    total = Expr.constant(0)
    for q in iproduct(range(3), repeat=d):
        knots = subgrid_knots(q, N, d)
        # patch locators: sharpened +-1 indicators per coarse knot
        z_sharp = {}
        for n in knots:
            acc = Expr.constant(0)
            for pk in patch_knots(n, N, d):
                acc = acc + poly_hat(x * N - pk[0], relu_bound_N, stages_spike_N)
            z = core.softclamp(acc * 2 - 1, rat(3), stages_clamp)
            z_sharp[n] = core.materialize(core.u_iter(z, stages_z))

        def select(values, bound):
            acc = Expr.constant(0)
            for n in knots:
                acc = acc + (z_sharp[n] + 1) * (rat(values[n]) / 2)
            return acc

        # selected seed and initial coefficients
        w_expr = select(seeds, 2)
        sel_init = {
            k: core.materialize(select({n: initials[n][k] for n in knots}, 2))
            for k in orders
        }
        # selected coarse coordinate (for hat offsets)
        coord = core.materialize(
            select({n: rat(n[0]) for n in knots}, N)
        )

        # bit-reading trajectory with soft clamping
        w_cur = core.materialize(core.softclamp(w_expr, rat(2 + N * 3), stages_clamp))
        bit_exprs = []
        for i in range(D):
            bit_exprs.append((1 - core.u_iter(w_cur, stages_bit)) * rat(1, 2))
            if i + 1 < D:
                w_cur = core.materialize(
                    core.softclamp(core.bit_map(w_cur), rat(6), stages_clamp)
                )

        # replay the correction recurrence (affine in the bits)
        approx = dict(sel_init)
        coeffs_at = [dict(approx)]
        bit_i = 0
        for prev, cur in zip(rel_path, rel_path[1:]):
            step = cur[0] - prev[0]
            h = rat(step, M)
            nxt = {}
            for k in orders:
                acc = Expr.constant(0)
                hp = rat(1)
                fact = 1
                for nn in range(kmax - sum(k) + 1):
                    k2 = (k[0] + nn,)
                    acc = acc + approx[k2] * (hp / fact)
                    hp = hp * h
                    fact *= nn + 1
                dig = (bit_exprs[bit_i] * 4 + bit_exprs[bit_i + 1] * 2
                       + bit_exprs[bit_i + 2])
                bit_i += 3
                nxt[k] = core.materialize(acc + (dig - 3) * tol[k])
            approx = nxt
            coeffs_at.append(dict(approx))

        # fine-scale selection (one block per residue class), exact products
        frame = x * M - coord * s + s
        f_q = Expr.constant(0)
        for cls in range(3):
            members = [(t, rel) for t, rel in enumerate(rel_path)
                       if rel[0] % 3 == cls]
            if not members:
                continue
            indicators = []
            for _t, rel in members:
                acc = Expr.constant(0)
                for pk in patch_knots(rel, 2 * s, 1):
                    acc = acc + poly_hat(frame - pk[0], relu_bound_M,
                                         stages_spike_M)
                indicators.append(core.materialize(acc))
            sel_coeffs = {}
            for k in orders:
                acc = Expr.constant(0)
                for ind, (t, _rel) in zip(indicators, members):
                    acc = acc + core.mul(ind, coeffs_at[t][k])
                sel_coeffs[k] = core.materialize(acc)
            sel_rel = Expr.constant(0)
            for ind, (_t, rel) in zip(indicators, members):
                sel_rel = sel_rel + ind * rel[0]
            offset = x - coord * rat(1, N) - (sel_rel - s) * rat(1, M)
            block = sel_coeffs[orders[0]]
            mono = offset
            for k in orders[1:]:
                term = core.mul(sel_coeffs[k], mono)
                block = block + term * rat(1, mi_factorial(k))
                if sum(k) < kmax:
                    mono = core.mul(mono, offset)
            spikesum = Expr.constant(0)
            for _t, rel in members:
                spikesum = spikesum + poly_hat(frame - rel[0], relu_bound_M,
                                               stages_spike_M)
            f_q = f_q + core.mul(core.materialize(spikesum),
                                 core.materialize(block))

        w_q = Expr.constant(0)
        for n in knots:
            w_q = w_q + poly_hat(x * N - n[0], relu_bound_N, stages_spike_N)
        total = total + core.mul(core.materialize(w_q), core.materialize(f_q))

    meta = {
        "variant": "poly_activation",
        "d": d,
        "r": r,
        "p": rat(p),
        "N": N,
        "M": M,
        "fn": f.fid,
        "requested_W": W,
        "trajectory_len": D,
        "enc_weights": (N + 1) * (1 + K),
        "bits_per_enc": D,
        "pure_polynomial": curvature is None,
    }
    return b.finish(total, meta=meta)
