"""Deep-phase constructor: per-cell encoded coefficients, sequential digit
extraction, knot/encoding selection, and the 3^d-way assembly.

Per residue-class subgrid q the network (1) selects the coarse knot for x
and that cell's encoding scalars by constant interpolants, (2) decodes all
per-knot coefficients with the shared ramp-gate decoder, (3) evaluates
approximate Taylor sums through multiplication gadgets, (4) forms the
matching hat values, and (5) combines everything under the q-filter
partition of unity.  At the boundary rate (p = 2r/d) the fine knots are
split again into 3^d classes so only a constant number of Taylor-sum blocks
is instantiated per subgrid; below the boundary one block per fine knot is
affordable and simpler.
"""

from __future__ import annotations

from itertools import product as iproduct
from math import log2

from ..codec import (
    build_decoder_net,
    encode_cube,
    knot_traversal,
    taylor_orders,
    taylor_table,
)
from ..errors import NetsynthError
from ..gadgets import gate_binary_exprs, product_exprs
from ..network import Expr, NetBuilder, Network
from ..oracles import FunctionOracle
from ..partition import (
    Subgrid,
    constant_interpolant_exprs,
    interpolant_exprs,
    patch_knots,
    spike_exprs,
    subgrid_knots,
)
from ..scalars import rat, rat_ceil
from .common import BoundedExpr, deep_scales, gadget_eps_for, taylor_block_exprs

__all__ = ["build_deep_phase", "validate_deep_rate", "decoder_value_bound"]


def validate_deep_rate(d: int, r, p, include_boundary=True):
    rr, pp = rat(r), rat(p)
    lo, hi = rr / d, 2 * rr / d
    ok = lo < pp <= hi if include_boundary else lo < pp < hi
    if not ok:
        kind = "(r/d, 2r/d]" if include_boundary else "(r/d, 2r/d)"
        raise NetsynthError(
            f"rate {pp} outside the deep phase {kind} for r={rr}, d={d}"
        )


def decoder_value_bound(M: int, N: int, r, d: int) -> int:
    """Everywhere-bound on decoded coefficient signals, garbage included."""
    T = (2 * M // N + 1) ** d
    kmax = int(rat_ceil(rat(r))) - 1
    tol_max = 1.0 if kmax >= rat(r) else float(M) ** (kmax - float(rat(r)))
    growth = sum(M**-n / _fact(n) for n in range(kmax + 1))
    bound = 1.1
    for _ in range(T):
        bound = bound * growth + 3.5 * tol_max
    return int(bound) + 1


def _fact(n):
    f = 1
    for i in range(2, n + 1):
        f *= i
    return f


def build_deep_phase(f: FunctionOracle, p, W: int, gadget_eps=None,
                     _debug=False) -> Network:
    """Assemble the encoded-coefficient network for a weight budget W."""
    d, r = f.d, f.r
    validate_deep_rate(d, r, p)
    N, M = deep_scales(W, d, r, p)
    s = M // N
    orders = taylor_orders(d, r)
    K = len(orders)
    at_boundary = rat(p) == 2 * rat(r) / d

    # encode every cell once; cells are indexed by their coarse knot
    encodings = {}
    packed = {}
    for n in iproduct(range(N + 1), repeat=d):
        path = knot_traversal(n, N, M, d)
        tab = taylor_table(f, M, path)
        enc = encode_cube(tab, n, N, M, r)
        encodings[n] = enc
        packed[n] = enc.packed_scalars()

    rel_path = knot_traversal((1,) * d, N, M, d)  # relative pattern, all cells
    T = len(rel_path)
    kmax = int(rat_ceil(rat(r))) - 1
    # multiplications stacked on one evaluation path: monomial chain, a
    # coefficient product per term, the hat product, and the q-filter
    n_gadgets = 2 if kmax == 0 else kmax + 3
    eps = rat(gadget_eps) if gadget_eps is not None else gadget_eps_for(M, r, n_gadgets)
    b_dec = decoder_value_bound(M, N, r, d)
    decoder = build_decoder_net(N, M, r, d)

    b = NetBuilder(d)
    xs = b.inputs()
    total = Expr.constant(0)
    blocks_per_q = None
    debug_exprs = []
    for q in iproduct(range(3), repeat=d):
        sg = Subgrid(q, N)
        knots = subgrid_knots(q, N, d)
        # selected coordinates are reused by every hat: materialize once
        coord = [
            b.register_nonneg(
                constant_interpolant_exprs(b, xs, sg, knots, [n[i] for n in knots])
            )
            for i in range(d)
        ]
        dec_inputs = [
            constant_interpolant_exprs(
                b, xs, sg, knots, [encodings[n].initials[k] for n in knots]
            )
            for k in orders
        ] + [
            constant_interpolant_exprs(
                b, xs, sg, knots, [packed[n][k] for n in knots]
            )
            for k in orders
        ]
        dec_outs = b.inline(decoder, dec_inputs)

        # in-cell frame: the cell's fine knots sit at rel in [0, 2s]^d
        frame = [xs[i] * M - coord[i] * s + s for i in range(d)]

        def spike_at(rel):
            return spike_exprs(b, [frame[i] - rel[i] for i in range(d)])

        def offsets_at(rel_coords):
            # x - m_abs/M with m_abs = s*n_q(x) + rel - s
            return [
                xs[i] - coord[i] * rat(1, N) - (rel_coords[i] - s) * rat(1, M)
                for i in range(d)
            ]

        # One Taylor block per fine residue class (3^d per subgrid).
        # Required at the boundary rate; used at every rate because it
        # removes a per-knot log factor that would otherwise dominate the
        # parameter count at small scales (constants only; see ledger).
        f_q = Expr.constant(0)
        blocks_per_q = 0
        for cls in iproduct(range(3), repeat=d):
            members = [
                (t, rel)
                for t, rel in enumerate(rel_path)
                if all(rel[i] % 3 == cls[i] for i in range(d))
            ]
            if not members:
                continue
            blocks_per_q += 1
            indicators = []
            for _t, rel in members:
                if d == 1:
                    # the patch indicator is a trapezoid: 4 ramps beat the
                    # equivalent 3-hat sum
                    y = frame[0]
                    acc = (
                        b.relu(y - (rel[0] - 2))
                        - b.relu(y - (rel[0] - 1))
                        - b.relu(y - (rel[0] + 1))
                        + b.relu(y - (rel[0] + 2))
                    )
                else:
                    acc = Expr.constant(0)
                    for pk in patch_knots(rel, 2 * s, d):
                        acc = acc + spike_exprs(
                            b, [frame[i] - pk[i] for i in range(d)]
                        )
                indicators.append(b.register_nonneg(acc))
            # hats partition unity and each appears under exactly one
            # class member, so the gated sums stay bounded by b_dec
            sel_bound = b_dec + 1
            sel_coeffs = {}
            for k in orders:
                acc = Expr.constant(0)
                for ind, (t, _rel) in zip(indicators, members):
                    acc = acc + gate_binary_exprs(
                        b, ind, dec_outs[t * K + orders.index(k)], b_dec
                    )
                sel_coeffs[k] = BoundedExpr(b.register_signed(acc), sel_bound)
            sel_rel = []
            for i in range(d):
                acc = Expr.constant(0)
                for ind, (_t, rel) in zip(indicators, members):
                    acc = acc + ind * rel[i]
                sel_rel.append(b.register_nonneg(acc))
            block = taylor_block_exprs(
                b, offsets_at(sel_rel), sel_coeffs, orders, eps,
                off_bound=rat(3), coeff_bound=sel_bound,
            )
            spikesum = Expr.constant(0)
            for _t, rel in members:
                spikesum = spikesum + spike_at(rel)
            f_q = f_q + product_exprs(
                b, spikesum, block.expr, eps, rat(1), max(block.bound, rat(1))
            )
        w_q = interpolant_exprs(b, xs, [(n, rat(1)) for n in knots], N)
        # the class hat-sums jointly cover at most the full unity partition,
        # so f_q is bounded by the worst block bound plus gadget slack
        fq_bound = block.bound + 1
        total = total + product_exprs(b, w_q, f_q, eps, rat(1), fq_bound)
        if _debug:
            debug_exprs += [w_q, f_q, coord[0], dec_outs[0], dec_outs[K]]

    n_cells = (N + 1) ** d
    meta = {
        "variant": "deep_phase",
        "d": d,
        "r": r,
        "p": rat(p),
        "N": N,
        "M": M,
        "fn": f.fid,
        "requested_W": W,
        "gadget_eps": eps,
        "gadget_slack": 2 * (3**d) * (n_gadgets + T) * eps,
        "taylor_blocks_per_q": blocks_per_q,
        "enc_weights": n_cells * 2 * K,
        "bits_per_enc": round((T - 1) * log2(7), 3),
        "boundary_rate": at_boundary,
    }
    outputs = [total] + debug_exprs if _debug else total
    return b.finish(outputs, meta=meta)
