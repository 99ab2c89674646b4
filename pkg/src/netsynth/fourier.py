"""Periodic-activation constructions: clamped parity gates, dyadic patch
encoders, dichotomy lookup driven by a single weight, seed-weight chains,
two-element partition-of-unity filters, and the full builder whose only
function-dependent parameter is one scalar.

Two activation backends: the triangle wave (exact rational arithmetic
throughout, the default for bit-exact tests) and sine (certified interval
bisection; the tiny slack between the declared Lipschitz constant and a
tight rational bound on pi pays for the enclosure widths).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product as iproduct
from math import ceil

import gmpy2
from gmpy2 import mpq
from mpmath import iv, mp

from .errors import EnclosureError, NetsynthError
from .gadgets import gate_binary_exprs, product_exprs
from .network import Expr, NetBuilder, Network, SigmaSpec, _PI_UPPER_TIGHT
from .oracles import FunctionOracle
from .scalars import den, num, rat, rat_ceil, rat_floor

__all__ = [
    "Assignment",
    "Schedule",
    "make_schedule",
    "build_parity",
    "build_patch_encoder",
    "eval_dichotomy",
    "find_assignment_weight",
    "build_branch_gate",
    "find_seed_weight",
    "build_unity_filters",
    "build_deep_fourier",
    "extract_seed",
    "attach_seed",
]


@dataclass(frozen=True)
class Assignment:
    """Arbitrary boolean table on K-bit inputs; index = sum z_i * 2^(K-i)."""

    K: int
    table: tuple

    def __post_init__(self):
        if len(self.table) != 2**self.K:
            raise NetsynthError("table length must be 2^K")
        if any(v not in (0, 1) for v in self.table):
            raise NetsynthError("table entries must be bits")

    def value(self, z) -> int:
        idx = 0
        for zi in z:
            idx = (idx << 1) | int(zi)
        return self.table[idx]

    @staticmethod
    def random(K: int, rng) -> "Assignment":
        return Assignment(K, tuple(rng.randrange(2) for _ in range(2**K)))


@dataclass(frozen=True)
class Schedule:
    """Gain/interval-length sequences a_k, l_k (1-indexed via lists)."""

    a: tuple
    l: tuple
    c_sigma: mpq

    def gain(self, k: int):
        return self.a[k - 1]

    def length(self, k: int):
        return self.l[k - 1]


def make_schedule(K: int, sigma: SigmaSpec) -> Schedule:
    """a_1 = 2, l_1 = 1/2, a_k = 4/l_(k-1), l_k = min(l/2, l/(a_k c))."""
    if K < 1:
        raise NetsynthError("K must be >= 1")
    if sigma.period != 2:
        raise NetsynthError("dichotomy machinery assumes period 2")
    c = sigma.lipschitz
    a = [rat(2)]
    l = [rat(1, 2)]
    for _ in range(2, K + 1):
        ak = 4 / l[-1]
        lk = min(l[-1] / 2, l[-1] / (ak * c))
        a.append(ak)
        l.append(lk)
    return Schedule(tuple(a), tuple(l), c)


# ---------------------------------------------------------------------------
# Parity gates and patch encoders


def clamp_pm1_exprs(b: NetBuilder, e: Expr) -> Expr:
    """min(1, max(-1, e)) with two relus."""
    low = b.relu(e + 1) - 1
    return 1 - b.relu(1 - low)


def parity_exprs(b: NetBuilder, e: Expr, gain, sigma: SigmaSpec) -> Expr:
    """Clamped rescaled activation: +-1 on cell interiors, analog only on
    guard zones of width <= period/(4*gain) around the half-period grid."""
    return clamp_pm1_exprs(b, b.periodic(e, sigma) * rat(gain))


def build_parity(gain, scale, shift, sigma: SigmaSpec) -> Network:
    g = rat(gain)
    if g <= 1:
        raise NetsynthError("gain must exceed 1")
    b = NetBuilder(1)
    out = parity_exprs(b, b.x(0) * rat(scale) + rat(shift), g, sigma)
    guard = sigma.period / (4 * g)
    return b.finish(out, meta={
        "kind": "parity", "gain": g, "scale": rat(scale), "shift": rat(shift),
        "guard_halfwidth": guard, "sigma": sigma.kind,
    })


def patch_encoder_exprs(b: NetBuilder, xs, U: int, sigma: SigmaSpec, gain):
    """K = d*U clamped parity outputs; output (u, i) reads scale 2^u of
    coordinate i.  Off guard zones the signs determine the dyadic cell."""
    outs = []
    for u in range(1, U + 1):
        for xe in xs:
            outs.append(parity_exprs(b, xe * (2**u), gain, sigma))
    return outs


def build_patch_encoder(U: int, d: int, sigma: SigmaSpec, gain=None) -> Network:
    M = 2**U
    g = rat(gain) if gain is not None else rat(8 * M)
    b = NetBuilder(d)
    outs = patch_encoder_exprs(b, b.inputs(), U, sigma, g)
    return b.finish(outs, meta={
        "kind": "patch-encoder", "U": U, "M": M, "K": d * U, "gain": g,
        "guard_halfwidth": sigma.period / (4 * g),
    })


# ---------------------------------------------------------------------------
# Dichotomy lookup


def _sigma_exact(sigma: SigmaSpec, x):
    return sigma.eval_rational(x)


def eval_dichotomy(w, z, schedule: Schedule, sigma: SigmaSpec):
    """H_{K,w}(z): apply g_K first (identity or sigma(a_k * .)), then sign.

    Exact for piecewise-linear activations; certified interval arithmetic
    for sine (raises EnclosureError if the sign cannot be certified).
    """
    K = len(z)
    if sigma.kind != "sine":
        val = rat(w)
        for k in range(K, 0, -1):
            if z[k - 1]:
                val = _sigma_exact(sigma, schedule.gain(k) * val)
        if val == 0:
            raise EnclosureError("sign lands exactly on a boundary")
        return 1 if val > 0 else 0
    bits_needed = -int(rat_floor(_log2_rat(schedule.length(K)))) + 120
    with mp.workprec(max(160, bits_needed)):
        val = iv.mpf([_to_mpf_str(w), _to_mpf_str(w)])
        for k in range(K, 0, -1):
            if z[k - 1]:
                a = schedule.gain(k)
                val = iv.sin(iv.pi * (iv.mpf(num(a)) / den(a)) * val)
        if val.a > 0:
            return 1
        if val.b < 0:
            return 0
        raise EnclosureError("could not certify the sign at this precision")


def _log2_rat(q):
    return rat(num(q).bit_length() - den(q).bit_length())


def _to_mpf_str(q):
    q = rat(q)
    return f"{num(q)}/{den(q)}"


def _base_interval(bit0, bit1):
    """K = 1 quadrants of [-1, 1]; closed intervals of length 1/2."""
    return {
        (1, 1): (rat(0), rat(1, 2)),
        (1, 0): (rat(1, 2), rat(1)),
        (0, 0): (rat(-1, 2), rat(0)),
        (0, 1): (rat(-1), rat(-1, 2)),
    }[(bit0, bit1)]


def _periodic_solve_exact(sigma: SigmaSpec, target, lo, hi):
    """Some t in [lo, hi] with sigma(t) = target, for piecewise-linear
    sigma; the window must span at least one period."""
    T = sigma.period
    if sigma.kind == "triangle":
        pts = [(rat(0), rat(0)), (T / 4, rat(1)), (3 * T / 4, rat(-1)), (T, rat(0))]
    else:
        pts = list(sigma.table)
    base = rat_floor(lo / T) * T
    t = rat(target)
    for rep in range(3):
        off = base + rep * T
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            if (y0 - t) * (y1 - t) <= 0 and y0 != y1:
                sol = off + x0 + (x1 - x0) * (t - y0) / (y1 - y0)
                if lo <= sol <= hi:
                    return sol
    raise EnclosureError("no crossing found in the window")


def _sine_solve_certified(target, lo, hi, cert_tol):
    """t in [lo, hi] with |sin(pi t) - target| <= cert_tol, certified."""
    prec = max(200, -int(rat_floor(_log2_rat(cert_tol))) + 120)
    with gmpy2.context(precision=prec):
        pi = gmpy2.const_pi()
        tl, th = gmpy2.mpfr(lo), gmpy2.mpfr(hi)
        tgt = gmpy2.mpfr(rat(target))
        best = None
        # solutions of sin(pi t) = target: t = 2j + asn or 2j + 1 - asn
        asn = gmpy2.asin(max(gmpy2.mpfr(-1), min(gmpy2.mpfr(1), tgt))) / pi
        for base_off, signed_asn in ((0, asn), (1, -asn)):
            j0 = gmpy2.floor((tl - base_off - signed_asn) / 2)
            for dj in (0, 1, 2):
                cand = 2 * (j0 + dj) + base_off + signed_asn
                if tl <= cand <= th:
                    best = cand
                    break
            if best is not None:
                break
        if best is None:
            raise EnclosureError("no sine crossing inside the window")
        from .scalars import mpfr_to_exact_rational

        sol = mpfr_to_exact_rational(best)
    with mp.workprec(prec):
        enc = iv.sin(iv.pi * iv.mpf([_to_mpf_str(sol), _to_mpf_str(sol)]))
        t = iv.mpf([_to_mpf_str(rat(target)), _to_mpf_str(rat(target))])
        diff = enc - t
        tol = rat(cert_tol)
        if not (abs(diff.a) <= float(tol) and abs(diff.b) <= float(tol)):
            raise EnclosureError("sine solve failed certification")
    return sol


def find_assignment_weight(assignment: Assignment, sigma: SigmaSpec,
                           schedule: Schedule | None = None):
    """A weight w_A (plus its interval of schedule length l_K) whose
    dichotomy chain reproduces the assignment on every input.

    Endpoints of the returned closed interval may touch sign boundaries for
    piecewise-linear activations (the schedule bound is tight there); use
    interior points when in doubt.
    """
    K = assignment.K
    if schedule is None:
        schedule = make_schedule(K, sigma)
    pi_margin = None
    if sigma.kind == "sine":
        # true Lipschitz of sin(2 pi x / T) is 2 pi / T < tight bound
        tight = 2 * _PI_UPPER_TIGHT / sigma.period
        ratio = tight / sigma.lipschitz
        if ratio >= 1:
            raise NetsynthError("declared Lipschitz bound leaves no margin")
        pi_margin = 1 - ratio

    def rec(table, k):
        if k == 1:
            return _base_interval(table[0], table[1])
        half = rec(tuple(table[0::2]), k - 1)  # z_k = 0
        other = rec(tuple(table[1::2]), k - 1)  # z_k = 1
        c0 = (half[0] + half[1]) / 2
        c1 = (other[0] + other[1]) / 2
        a = schedule.gain(k)
        prev_len = schedule.length(k - 1)
        wlo, whi = c0 - prev_len / 4, c0 + prev_len / 4
        if sigma.kind == "sine":
            cert_tol = prev_len / 2 * pi_margin
            w = _sine_solve_certified(c1, a * wlo, a * whi, cert_tol) / a
        else:
            w = _periodic_solve_exact(sigma, c1, a * wlo, a * whi) / a
        hw = schedule.length(k) / 2
        return (w - hw, w + hw)

    lo, hi = rec(assignment.table, K)
    return (lo + hi) / 2, (lo, hi)


# ---------------------------------------------------------------------------
# Branch gates, seed chains, filters


def branch_gate_exprs(b: NetBuilder, bit: Expr, reg: Expr, gain,
                      sigma: SigmaSpec) -> Expr:
    """(1-bit)*reg + bit*sigma(gain*reg), exact for bit in {0,1} and
    |reg| <= 1, via the one-relu binary product."""
    y = b.periodic(reg * rat(gain), sigma)
    return reg - gate_binary_exprs(b, bit, reg, 1) + gate_binary_exprs(b, bit, y, 1)


def build_branch_gate(gain, sigma: SigmaSpec) -> Network:
    b = NetBuilder(2)
    out = branch_gate_exprs(b, b.x(0), b.x(1), gain, sigma)
    return b.finish(out, meta={"kind": "branch-gate", "gain": rat(gain)})


def find_seed_weight(targets, a, sigma: SigmaSpec):
    """w1 whose forward chain w_{k+1} = sigma(a*w_k) passes within 2/a of
    every target: backward preimage walk (exact for piecewise-linear)."""
    targets = [rat(t) for t in targets]
    if any(abs(t) > 1 for t in targets):
        raise NetsynthError("targets must lie in [-1, 1]")
    a = rat(a)
    if a <= 0:
        raise NetsynthError("gain must be positive")
    cur = targets[-1]
    if sigma.kind == "sine":
        R = len(targets)
        prec = int(R * float(_log2_rat(rat_ceil(a * 4))) + 256)
        with gmpy2.context(precision=prec):
            pi = gmpy2.const_pi()
            curf = gmpy2.mpfr(cur)
            for wstar in reversed(targets[:-1]):
                # solve sin(pi a u) = curf with |u - wstar| <= 1/a
                asn = gmpy2.asin(max(gmpy2.mpfr(-1), min(gmpy2.mpfr(1), curf))) / pi
                lo = gmpy2.mpfr(rat(wstar)) * a - 1
                j = gmpy2.floor((lo - asn) / 2) + 1
                cand = None
                for jj in (j - 1, j, j + 1):
                    for c in (2 * jj + asn, 2 * jj + 1 - asn):
                        if lo <= c <= lo + 2:
                            cand = c
                            break
                    if cand is not None:
                        break
                if cand is None:
                    raise EnclosureError("no preimage in the seed window")
                curf = cand / a
            from .scalars import mpfr_to_exact_rational

            return mpfr_to_exact_rational(curf)
    for wstar in reversed(targets[:-1]):
        lo = wstar - 1 / a
        sol = _periodic_solve_exact(sigma, cur, a * lo, a * lo + 2) / a
        cur = sol
    return cur


def psi_exprs(b: NetBuilder, xe: Expr, M: int, a0, sigma: SigmaSpec):
    """One-coordinate partition of unity (Psi0, Psi1 = 1 - Psi0)."""
    theta = parity_exprs(b, xe * (2 * M), a0, sigma)
    psi0 = (theta + 1) * rat(1, 2)
    return psi0, 1 - psi0


def build_unity_filters(M: int, a0, d: int, sigma: SigmaSpec, eps=None):
    """Networks for all 2^d products of per-coordinate filters."""
    a0 = rat(a0)
    if a0 <= 1:
        raise NetsynthError("filter gain must exceed 1")
    eps = rat(eps) if eps is not None else rat(1, 4 * M * M)
    nets = {}
    for q in iproduct(range(2), repeat=d):
        b = NetBuilder(d)
        factors = []
        for i in range(d):
            p0, p1 = psi_exprs(b, b.x(i), M, a0, sigma)
            factors.append(p0 if q[i] == 0 else p1)
        out = factors[0]
        for fac in factors[1:]:
            out = product_exprs(b, out, fac, eps, 1, 1)
        nets[q] = b.finish(out, meta={
            "kind": "unity-filter", "q": list(q), "M": M, "gain": a0,
        })
    return nets


# ---------------------------------------------------------------------------
# Full builder


def _value_bits(v, R: int):
    """Bits b_0..b_R with -1 + 2*(sum b_j 2^-(j+1) + 2^-(R+2)) within
    2^-(R+1) of v in [-1, 1]."""
    u = (rat(v) + 1) / 2
    idx = int(rat_floor(u * 2 ** (R + 1)))
    idx = min(2 ** (R + 1) - 1, max(0, idx))
    return [(idx >> (R - j)) & 1 for j in range(R + 1)]


def build_deep_fourier(f: FunctionOracle, U: int, sigma: SigmaSpec,
                       gain=None) -> Network:
    """Mixed relu/periodic net: patch encoders, per-bit dichotomy
    classifiers, a single-seed weight chain, and filter blending.  All
    weights except the seed-chain entry bias are function-independent."""
    d, r = f.d, f.r
    if rat(r) > 1:
        raise NetsynthError("the periodic construction assumes r <= 1")
    if d > 2:
        raise NetsynthError("supported for d <= 2")
    M = 2**U
    K = d * U
    R = int(ceil(float(rat(r)) * U)) + 1
    enc_gain = rat(gain) if gain is not None else rat(8 * M)
    schedule = make_schedule(K, sigma)

    # assignments: per filter-class q and bit position, the table over cells
    quarter = rat(1, 4 * M)
    tables = {}
    targets = []
    order = []
    for q in iproduct(range(2), repeat=d):
        shift = [quarter * (1 - 2 * q[i]) for i in range(d)]
        centers = {}
        for cell in iproduct(range(M), repeat=d):
            x = [rat(cell[i], M) + quarter * (1 + 2 * q[i]) for i in range(d)]
            centers[cell] = f.evaluate(x)
        for k_bit in range(R + 1):
            table = [0] * (2**K)
            for cell, v in centers.items():
                idx = 0
                for u in range(1, U + 1):
                    for i in range(d):
                        idx = (idx << 1) | ((cell[i] >> (U - u)) & 1)
                table[idx] = _value_bits(v, R)[k_bit]
            a = Assignment(K, tuple(table))
            w_A, _iv = find_assignment_weight(a, sigma, schedule)
            tables[(q, k_bit)] = a
            targets.append(w_A)
            order.append((q, k_bit))
    seed_gain = 8 / schedule.length(K)
    seed = find_seed_weight(targets, seed_gain, sigma)

    b = NetBuilder(d)
    xs = b.inputs()
    # the single f-dependent weight: the bias feeding the first chain unit
    chain = b.periodic(Expr.constant(seed * seed_gain), sigma)
    seed_unit = b.input_dim  # id of the unit just created
    regs = {}
    for pos, key in enumerate(order):
        regs[key] = chain
        if pos + 1 < len(order):
            chain = b.periodic(chain * seed_gain, sigma)

    prod_eps = rat(1, 2) ** (R + 4)
    total = Expr.constant(0)
    for q in iproduct(range(2), repeat=d):
        # shifted, clamped encoder for this filter class
        lo_clip = quarter
        hi_clip = 1 - quarter
        shifted = []
        for i in range(d):
            t = xs[i] + quarter * (1 - 2 * q[i])
            t = lo_clip + b.relu(t - lo_clip)
            t = hi_clip - b.relu(hi_clip - t)
            shifted.append(t)
        codes = patch_encoder_exprs(b, shifted, U, sigma, enc_gain)
        bits = [(1 - c) * rat(1, 2) for c in codes]
        value_q = Expr.constant(-1 + 2 * rat(1, 2) ** (R + 2))
        for k_bit in range(R + 1):
            reg = regs[(q, k_bit)]
            for k in range(K, 0, -1):
                reg = branch_gate_exprs(b, bits[k - 1], reg,
                                        schedule.gain(k), sigma)
            clf = b.relu(reg * 4) - b.relu(reg * 4 - 1)
            value_q = value_q + clf * (2 * rat(1, 2) ** (k_bit + 1))
        # filter product for this class
        filt = None
        for i in range(d):
            p0, p1 = psi_exprs(b, xs[i], M, enc_gain, sigma)
            fac = p0 if q[i] == 0 else p1
            filt = fac if filt is None else product_exprs(
                b, filt, fac, prod_eps, 1, 1)
        total = total + product_exprs(b, filt, value_q, prod_eps, 1, 1)

    meta = {
        "variant": "deep_fourier",
        "d": d,
        "r": r,
        "U": U,
        "M": M,
        "K": K,
        "R": R,
        "fn": f.fid,
        "sigma": sigma.kind,
        "gain": enc_gain,
        "seed_gain": seed_gain,
        "seed_unit": seed_unit,
        "enc_weights": 1,
        "bits_per_enc": -int(rat_floor(_log2_rat(schedule.length(K)))) * len(order),
        "guard_halfwidth": sigma.period / (4 * enc_gain),
    }
    return b.finish(total, meta=meta)


def extract_seed(net: Network):
    """The single function-dependent scalar of a periodic-lookup net."""
    uid = net.meta.get("seed_unit")
    if uid is None:
        raise NetsynthError("network carries no seed annotation")
    bias = net.unit(uid).bias
    return bias / rat(net.meta["seed_gain"])


def attach_seed(net: Network, seed) -> Network:
    """Re-attach a seed scalar to a skeleton network (same architecture)."""
    uid = net.meta.get("seed_unit")
    if uid is None:
        raise NetsynthError("network carries no seed annotation")
    from dataclasses import replace

    units = list(net.units)
    pos = uid - net.input_dim
    units[pos] = replace(units[pos], bias=rat(seed) * rat(net.meta["seed_gain"]))
    return Network(net.input_dim, units, net.outputs, net.layer_of, net.meta)
