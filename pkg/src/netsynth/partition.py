"""Standard simplicial grid partitions, spike (hat) networks and subgrids.

The scale-N partition triangulates space into simplexes
``{x : 0 <= x_{p(1)} - n_{p(1)}/N <= ... <= x_{p(d)} - n_{p(d)}/N <= 1/N}``
indexed by a base knot ``n`` and a coordinate permutation ``p``.  The spike
function is the continuous piecewise-linear hat that is 1 at its knot, 0 at
every other knot, and linear on each simplex; as a ReLU network it is

    relu(1 - max(0, y_1..y_d) - max(0, -y_1..-y_d)),   y = N*x - n,

with the running maxima realized by relu chains (O(d^2) weights).
"""

from __future__ import annotations

from itertools import product
from typing import NamedTuple, Sequence

from .errors import NetsynthError
from .network import Expr, NetBuilder, Network
from .scalars import rat, rat_ceil, rat_floor

__all__ = [
    "SimplexId",
    "Subgrid",
    "simplex_of",
    "simplex_contains",
    "spike_exprs",
    "build_spike",
    "build_linear_interpolant",
    "build_constant_interpolant",
    "patch_knots",
    "patch_contains",
    "subgrid_knots",
    "knot_for",
]


class SimplexId(NamedTuple):
    base: tuple  # integer base knot n
    perm: tuple  # coordinate permutation, 0-based, sorted by rising offset
    scale: int


class Subgrid(NamedTuple):
    """One of the 3^d residue-class subgrids with 3x spacing; the patches of
    its knots are pairwise disjoint."""

    q: tuple
    scale: int

    def knots(self):
        return subgrid_knots(self.q, self.scale, len(self.q))


def _as_rat_point(x):
    return [rat(v) for v in x]


def simplex_of(x, N: int) -> SimplexId:
    """Locate the simplex of the scale-N partition containing x in [0,1]^d.

    Boundary points admit several simplexes; ties break to the
    lexicographically smallest (base, permutation).
    """
    xs = _as_rat_point(x)
    d = len(xs)
    a = [N * v for v in xs]
    base = []
    for ai in a:
        lo = max(0, min(rat_ceil(ai) - 1, N - 1))
        hi = max(0, min(rat_floor(ai), N - 1))
        base.append(min(lo, hi))  # smallest admissible coordinate
    y = [a[i] - base[i] for i in range(d)]
    for i in range(d):
        if not (0 <= y[i] <= 1):
            raise NetsynthError(f"point outside [0,1]^d at coordinate {i}")
    perm = tuple(sorted(range(d), key=lambda i: (y[i], i)))
    return SimplexId(tuple(base), perm, N)


def simplex_contains(s: SimplexId, x) -> bool:
    xs = _as_rat_point(x)
    y = [s.scale * xs[i] - s.base[i] for i in range(len(xs))]
    prev = rat(0)
    for i in s.perm:
        if y[i] < prev:
            return False
        prev = y[i]
    return prev <= 1


def spike_exprs(b: NetBuilder, ys: Sequence[Expr]) -> Expr:
    """Hat value at offsets ys (already rescaled: ys = N*x - n)."""
    mp = b.relu(ys[0])
    for e in ys[1:]:
        mp = mp + b.relu(e - mp)
    mn = b.relu(-ys[0])
    for e in ys[1:]:
        mn = mn + b.relu(-e - mn)
    return b.relu(1 - mp - mn)


def build_spike(N: int, n, d: int) -> Network:
    """ReLU network computing the hat centered at knot n/N, exactly."""
    n = tuple(n)
    if len(n) != d:
        raise NetsynthError("knot dimension mismatch")
    b = NetBuilder(d)
    ys = [b.x(i) * N - n[i] for i in range(d)]
    out = spike_exprs(b, ys)
    return b.finish(out, meta={"kind": "spike", "N": N, "n": list(n)})


def interpolant_exprs(b: NetBuilder, xs, knot_values, N: int) -> Expr:
    """Sum of value-weighted hats at the given knots (shared builder)."""
    acc = Expr.constant(0)
    for n, v in knot_values:
        ys = [xs[i] * N - n[i] for i in range(len(xs))]
        acc = acc + spike_exprs(b, ys) * rat(v)
    return acc


def build_linear_interpolant(knots, values, N: int, d: int) -> Network:
    """Piecewise-linear network hitting the given values at the given knots
    and 0 at all unlisted knots, linear on each scale-N simplex."""
    knots = [tuple(k) for k in knots]
    if len(set(knots)) != len(knots):
        raise NetsynthError("duplicate knots")
    if len(knots) != len(values):
        raise NetsynthError("one value per knot required")
    b = NetBuilder(d)
    out = interpolant_exprs(b, b.inputs(), list(zip(knots, values)), N)
    return b.finish(out, meta={"kind": "linear-interpolant", "N": N})


def patch_knots(n, N: int, d: int):
    """In-grid knots of the patch of n: n + ({0,1}^d  or  {-1,0}^d)."""
    n = tuple(n)
    seen = set()
    for signs in ((0, 1), (-1, 0)):
        for off in product(signs, repeat=d):
            m = tuple(n[i] + off[i] for i in range(d))
            if all(0 <= mi <= N for mi in m):
                seen.add(m)
    return sorted(seen)


def constant_interpolant_exprs(b: NetBuilder, xs, subgrid: Subgrid, knots,
                               values) -> Expr:
    """In-builder form of :func:`build_constant_interpolant`."""
    q, N = subgrid.q, subgrid.scale
    d = len(q)
    grid = set(subgrid.knots())
    assignments = {}
    for n, v in zip(knots, values):
        n = tuple(n)
        if n not in grid:
            raise NetsynthError(f"knot {n} is not on subgrid {q}")
        for m in patch_knots(n, N, d):
            if m in assignments:
                raise NetsynthError("patches overlap; knots not subgrid-compatible")
            assignments[m] = rat(v)
    return interpolant_exprs(b, xs, sorted(assignments.items()), N)


def build_constant_interpolant(subgrid: Subgrid, knots, values) -> Network:
    """Network equal to values[k] on the whole patch of knots[k].

    The knots must come from one subgrid, which guarantees the patches are
    disjoint; the value is assigned to every in-grid knot of each patch and
    the linear interpolant is built over the union.  Equality holds on
    patch intersections with [0,1]^d.
    """
    q, N = subgrid.q, subgrid.scale
    d = len(q)
    grid = set(subgrid.knots())
    assignments = {}
    for n, v in zip(knots, values):
        n = tuple(n)
        if n not in grid:
            raise NetsynthError(f"knot {n} is not on subgrid {q}")
        for m in patch_knots(n, N, d):
            if m in assignments:
                raise NetsynthError("patches overlap; knots not subgrid-compatible")
            assignments[m] = rat(v)
    b = NetBuilder(d)
    out = interpolant_exprs(b, b.inputs(), sorted(assignments.items()), N)
    return b.finish(out, meta={"kind": "constant-interpolant", "N": N, "q": list(q)})


def subgrid_knots(q, N: int, d: int):
    """All knots of the residue-class subgrid q, lexicographically sorted."""
    q = tuple(q)
    if len(q) != d or any(not (0 <= qi <= 2) for qi in q):
        raise NetsynthError("q must lie in {0,1,2}^d")
    if N < 1:
        raise NetsynthError("N must be >= 1")
    axes = [range(qi, N + 1, 3) for qi in q]
    return [tuple(t) for t in product(*axes)]


def patch_contains(n, x, N: int) -> bool:
    """x lies in the (closed) patch of knot n at scale N."""
    xs = _as_rat_point(x)
    y = [N * xs[i] - n[i] for i in range(len(xs))]
    mp = max(max(y), rat(0))
    mn = max(max(-v for v in y), rat(0))
    return mp + mn <= 1


def knot_for(x, subgrid: Subgrid):
    """The unique subgrid knot whose patch contains x, or None."""
    xs = _as_rat_point(x)
    q, N = subgrid.q, subgrid.scale
    n = []
    for i, qi in enumerate(q):
        a = N * xs[i]
        lo, hi = rat_ceil(a - 1), rat_floor(a + 1)
        cand = None
        for c in range(lo + ((qi - lo) % 3), hi + 1, 3):
            if 0 <= c <= N:
                cand = c
                break
        if cand is None:
            return None
        n.append(cand)
    n = tuple(n)
    return n if patch_contains(n, xs, N) else None
