"""Shallow constructor: local Taylor sums with a continuous (linear) weight
assignment.

The fine grid is split into 3^d residue-class subgrids; per class, constant
interpolants select the active knot's coordinates and coefficients, so the
Taylor-sum machinery is instantiated a constant number of times rather than
per knot.  All coefficient-carrying weights are the oracle's derivative
values themselves, so the assignment is linear in them.
"""

from __future__ import annotations

from itertools import product

from ..errors import InfeasibleBudget
from ..gadgets import product_exprs
from ..network import Expr, NetBuilder, Network
from ..oracles import FunctionOracle
from ..partition import (
    Subgrid,
    constant_interpolant_exprs,
    interpolant_exprs,
    spike_exprs,
    subgrid_knots,
)
from ..scalars import rat, rat_ceil
from .common import BoundedExpr, gadget_eps_for, taylor_block_exprs

__all__ = ["build_shallow"]


def build_shallow(f: FunctionOracle, M: int, gadget_eps=None) -> Network:
    """Network computing the hat-weighted Taylor sum at fine scale M."""
    if M < 1:
        raise InfeasibleBudget("fine scale must be at least 1")
    d, r = f.d, f.r
    kmax = int(rat_ceil(r)) - 1
    from ..oracles import multi_indices

    orders = multi_indices(d, kmax)
    n_gadgets = 1 if kmax == 0 else kmax + 2
    eps = rat(gadget_eps) if gadget_eps is not None else gadget_eps_for(M, r, n_gadgets)

    coeff_bound = rat(2)  # ball norm <= 1, with slack for interpolant blending
    off_bound = rat(2)  # |x_i - selected_i/M| <= 2 anywhere on [0,1]^d

    b = NetBuilder(d)
    xs = b.inputs()
    total = Expr.constant(0)
    blocks = 0
    for q in product(range(3), repeat=d):
        sg = Subgrid(q, M)
        knots = subgrid_knots(q, M, d)
        if not knots:
            continue
        # per-coordinate knot selectors and per-order coefficient selectors,
        # materialized so consumers do not replicate the hat sums
        coord = [
            b.register_nonneg(
                constant_interpolant_exprs(b, xs, sg, knots, [n[i] for n in knots])
            )
            for i in range(d)
        ]
        coeffs = {}
        for k in orders:
            vals = [f.derivative(k, [rat(ni, M) for ni in n]) for n in knots]
            coeffs[k] = BoundedExpr(
                b.register_signed(constant_interpolant_exprs(b, xs, sg, knots, vals)),
                coeff_bound,
            )
        offsets = [xs[i] - coord[i] * rat(1, M) for i in range(d)]
        block = taylor_block_exprs(b, offsets, coeffs, orders, eps,
                                   off_bound, coeff_bound)
        blocks += 1
        # class filter: sum of hats of this class (partition of unity piece)
        filt = interpolant_exprs(b, xs, [(n, rat(1)) for n in knots], M)
        total = total + product_exprs(b, filt, block.expr, eps, rat(1),
                                      max(block.bound, rat(1)))
    slack = 2 * n_gadgets * eps * blocks
    meta = {
        "variant": "shallow",
        "d": d,
        "r": r,
        "N": M,
        "M": M,
        "fn": f.fid,
        "gadget_eps": eps,
        "gadget_slack": slack,
        "taylor_blocks": blocks,
        "enc_weights": 0,
        "bits_per_enc": 0,
    }
    return b.finish(total, meta=meta)
