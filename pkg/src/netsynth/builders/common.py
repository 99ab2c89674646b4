"""Shared assembly machinery for the end-to-end builders."""

from __future__ import annotations

from math import ceil, floor

from ..errors import InfeasibleBudget, NetsynthError
from ..gadgets import product_exprs
from ..network import Expr, NetBuilder
from ..oracles import mi_factorial
from ..scalars import rat, rat_ceil

__all__ = [
    "BoundedExpr",
    "taylor_block_exprs",
    "gadget_eps_for",
    "deep_scales",
    "int_root_floor",
]


def int_root_floor(W: int, d: int) -> int:
    """floor(W**(1/d)) without float drift."""
    if W < 1:
        raise InfeasibleBudget("budget must be positive")
    n = int(round(W ** (1.0 / d)))
    while n**d > W:
        n -= 1
    while (n + 1) ** d <= W:
        n += 1
    return n


def deep_scales(W: int, d: int, r, p):
    """Coarse/fine scales for the two-scale builders: N = floor(W^(1/d))
    rounded down, M = W^(p/r) rounded up to a multiple of N.  Realized
    counts are reported from the built network, not from W."""
    rr, pp = rat(r), rat(p)
    N = max(2, int_root_floor(W, d))
    target = float(W) ** (float(pp) / float(rr))
    M = N * max(2, ceil(target / N - 1e-9))
    return N, M


def gadget_eps_for(M: int, r, n_gadgets: int):
    """Accuracy per multiplication gadget: a rational lower bound of
    M^-r / (10 * n_gadgets), so assembly error stays dominated by the
    Taylor remainder."""
    k = int(rat_ceil(rat(r)))
    return rat(1, M**k) / (10 * max(1, n_gadgets))


class BoundedExpr:
    """Expr plus a certified magnitude bound, to size product gadgets."""

    __slots__ = ("expr", "bound")

    def __init__(self, expr: Expr, bound):
        self.expr = expr
        self.bound = rat(bound)


def _mul(b: NetBuilder, u: BoundedExpr, v: BoundedExpr, eps) -> BoundedExpr:
    out = product_exprs(b, u.expr, v.expr, eps, max(u.bound, rat(1)),
                        max(v.bound, rat(1)))
    return BoundedExpr(out, u.bound * v.bound + rat(eps))


def taylor_block_exprs(b: NetBuilder, offsets, coeffs, orders, eps,
                       off_bound, coeff_bound) -> BoundedExpr:
    """Approximate Taylor sum  sum_k coeffs[k]/k! * prod_i offsets[i]^k_i.

    ``offsets`` are the (x - center) expressions, ``coeffs`` the coefficient
    expressions; |k| <= 1 terms need no multiplication beyond one gadget.
    Returns the block with a certified everywhere-bound (garbage included),
    which downstream gadgets use for sizing.
    """
    d = len(offsets)
    zero = (0,) * d
    monos = {zero: BoundedExpr(Expr.constant(1), 1)}
    for k in sorted(orders, key=lambda k: (sum(k), k)):
        if sum(k) == 0:
            continue
        axis = next(i for i, ki in enumerate(k) if ki > 0)
        if sum(k) == 1:
            monos[k] = BoundedExpr(offsets[axis], off_bound)
            continue
        parent = list(k)
        parent[axis] -= 1
        monos[k] = _mul(b, monos[tuple(parent)],
                        BoundedExpr(offsets[axis], off_bound), eps)
    acc = coeffs[zero].expr
    total_bound = coeffs[zero].bound
    for k in orders:
        if sum(k) == 0:
            continue
        term = _mul(b, coeffs[k], monos[k], eps)
        w = rat(1, mi_factorial(k))
        acc = acc + term.expr * w
        total_bound = total_bound + term.bound * w
    return BoundedExpr(acc, total_bound)
