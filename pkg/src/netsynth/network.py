"""Weighted-DAG network representation, exact evaluator and combinators.

A network is an immutable, topologically ordered list of units.  Unit ids
``0..input_dim-1`` denote the inputs; unit ``i`` of the list has id
``input_dim + i``.  Each unit computes ``activation(sum(w_k * z_k) + bias)``
where the ``z_k`` are earlier unit (or input) values.  Designated output
units always carry the identity activation and act as affine readouts; they
are excluded from parameter counts (a bare readout over the inputs is a
zero-parameter network).

Parameter-count convention, fixed once and used everywhere: one parameter
per connection, one per bias and one per unit, summed over non-readout
units.

Evaluation modes:

* ``"rational"``  -- exact mpq arithmetic; bit-reproducible.  Refuses sine
  units (their values are irrational); triangle/table periodic units and
  polynomial units evaluate exactly.
* ``BigFloat(bits)`` -- every operation rounded to the declared mantissa.
* ``"float64"``   -- double precision, intended for error *measurement*
  only (see :func:`eval_batch`); never used for exactness claims.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import gmpy2
import numpy as np
from gmpy2 import mpfr, mpq

from .errors import (
    ArityMismatch,
    DimensionMismatch,
    NetsynthError,
    UnsupportedPrecision,
)
from .scalars import (
    RATIONAL,
    FLOAT64,
    BigFloat,
    bigfloat_context,
    den,
    num,
    rat,
    rat_floor,
    rat_from_str,
)

__all__ = [
    "SigmaSpec",
    "Unit",
    "Network",
    "Expr",
    "NetBuilder",
    "eval_network",
    "eval_outputs",
    "eval_batch",
    "compose_serial",
    "compose_parallel",
    "count_params",
    "ParamCounts",
    "network_to_json",
    "network_from_json",
]

IDENTITY = "identity"
RELU = "relu"
PERIODIC = "periodic"
POLYNOMIAL = "polynomial"

# Rational bounds on pi.  The declared sine Lipschitz constant uses the
# looser bound so certified constructions retain a strictly positive margin
# between the declared constant and the tight enclosure 355/113 > pi.
_PI_UPPER_TIGHT = mpq(355, 113)
_PI_UPPER = mpq(3927, 1250)


# ---------------------------------------------------------------------------
# Periodic activation specification


@dataclass(frozen=True)
class SigmaSpec:
    """A normalized periodic activation: period T, positive on (0, T/2),
    negative on (T/2, T), max = -min = 1.

    ``lipschitz`` is a declared rational upper bound on the true Lipschitz
    constant (exact for triangle/table, a strict rational over-estimate of
    2*pi/T for sine).
    """

    kind: str  # "sine" | "triangle" | "table"
    period: mpq
    lipschitz: mpq
    table: tuple = ()  # ((x, y), ...) breakpoints over one period, for kind="table"

    @staticmethod
    def sine(period=2) -> "SigmaSpec":
        T = rat(period)
        if T <= 0:
            raise NetsynthError("period must be positive")
        return SigmaSpec("sine", T, 2 * _PI_UPPER / T)

    @staticmethod
    def triangle(period=2) -> "SigmaSpec":
        T = rat(period)
        if T <= 0:
            raise NetsynthError("period must be positive")
        return SigmaSpec("triangle", T, mpq(4) / T)

    @staticmethod
    def from_table(points) -> "SigmaSpec":
        """Piecewise-linear periodic activation from breakpoints spanning
        one period.  Must satisfy the sign pattern and +-1 normalization."""
        pts = tuple((rat(x), rat(y)) for x, y in points)
        if len(pts) < 3:
            raise NetsynthError("table needs at least 3 breakpoints")
        T = pts[-1][0] - pts[0][0]
        if T <= 0:
            raise NetsynthError("breakpoints must span a positive period")
        if pts[0][1] != pts[-1][1]:
            raise NetsynthError("table endpoints must agree (periodicity)")
        ys = [y for _, y in pts]
        if max(ys) != 1 or min(ys) != -1:
            raise NetsynthError("table must be normalized to max=1, min=-1")
        lip = mpq(0)
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            if x1 <= x0:
                raise NetsynthError("breakpoints must be strictly increasing")
            lip = max(lip, abs((y1 - y0) / (x1 - x0)))
        spec = SigmaSpec("table", T, lip, pts)
        half = pts[0][0] + T / 2
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            mid = (x0 + x1) / 2
            v = spec.eval_rational(mid)
            if x1 <= half and v <= 0 and (x0 > pts[0][0] or mid > pts[0][0]):
                if v < 0:
                    raise NetsynthError("table violates positivity on (0, T/2)")
            if x0 >= half and v > 0:
                raise NetsynthError("table violates negativity on (T/2, T)")
        return spec

    # -- evaluation -------------------------------------------------------

    def _reduce(self, x):
        """x mod period, exactly, for rational x."""
        T = self.period
        return x - T * rat_floor(x / T)

    def eval_rational(self, x) -> mpq:
        if self.kind == "sine":
            raise UnsupportedPrecision(
                "sine activation has irrational values; use a BigFloat mode"
            )
        y = self._reduce(rat(x))
        T = self.period
        if self.kind == "triangle":
            q = T / 4
            if y <= q:
                return 4 * y / T
            if y <= 3 * q:
                return 2 - 4 * y / T
            return 4 * y / T - 4
        # table
        pts = self.table
        y = y + pts[0][0]
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            if y <= x1:
                return y0 + (y1 - y0) * (y - x0) / (x1 - x0)
        return pts[-1][1]

    def eval_bigfloat(self, x):
        """Evaluate under the *current* gmpy2 context."""
        if self.kind == "sine":
            two_pi = 2 * gmpy2.const_pi()
            return gmpy2.sin(two_pi * mpfr(x) / mpfr(self.period))
        # Exact piecewise-linear value, then one rounding.
        q = self._reduce_mpfr(x)
        return q

    def _reduce_mpfr(self, x):
        T = mpfr(self.period)
        y = x - T * gmpy2.floor(x / T)
        if self.kind == "triangle":
            q = T / 4
            if y <= q:
                return 4 * y / T
            if y <= 3 * q:
                return 2 - 4 * y / T
            return 4 * y / T - 4
        pts = self.table
        y = y + mpfr(pts[0][0])
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            if y <= mpfr(x1):
                return mpfr(y0) + mpfr(y1 - y0) * (y - mpfr(x0)) / mpfr(x1 - x0)
        return mpfr(pts[-1][1])

    def eval_float_array(self, v: np.ndarray) -> np.ndarray:
        T = float(self.period)
        if self.kind == "sine":
            return np.sin(2 * np.pi * v / T)
        y = np.mod(v, T)
        if self.kind == "triangle":
            return np.where(
                y <= T / 4,
                4 * y / T,
                np.where(y <= 3 * T / 4, 2 - 4 * y / T, 4 * y / T - 4),
            )
        xs = np.array([float(x) for x, _ in self.table])
        ys = np.array([float(yy) for _, yy in self.table])
        return np.interp(y + xs[0], xs, ys)

    def to_jsonable(self) -> dict:
        out = {
            "kind": self.kind,
            "period": [str(num(self.period)), str(den(self.period))],
            "lipschitz": [str(num(self.lipschitz)), str(den(self.lipschitz))],
        }
        if self.kind == "table":
            out["table"] = [
                [[str(num(x)), str(den(x))], [str(num(y)), str(den(y))]]
                for x, y in self.table
            ]
        return out

    @staticmethod
    def from_jsonable(d: dict) -> "SigmaSpec":
        period = mpq(int(d["period"][0]), int(d["period"][1]))
        lip = mpq(int(d["lipschitz"][0]), int(d["lipschitz"][1]))
        table = tuple(
            (mpq(int(x[0]), int(x[1])), mpq(int(y[0]), int(y[1])))
            for x, y in d.get("table", [])
        )
        return SigmaSpec(d["kind"], period, lip, table)


# ---------------------------------------------------------------------------
# Units and networks


@dataclass(frozen=True)
class Unit:
    """One computation node: activation(sum(w*z) + bias)."""

    idx: int
    activation: str
    incoming: tuple  # ((src_id, weight), ...) with src_id < idx
    bias: object
    sigma: SigmaSpec | None = None
    coeffs: tuple = ()  # polynomial coefficients, low order first


class Network:
    """Immutable weighted DAG; see module docstring for conventions."""

    __slots__ = ("input_dim", "units", "outputs", "layer_of", "meta")

    def __init__(self, input_dim, units, outputs, layer_of, meta=None):
        self.input_dim = input_dim
        self.units = tuple(units)
        self.outputs = tuple(outputs)
        self.layer_of = dict(layer_of)
        self.meta = dict(meta or {})
        self._validate()

    def _validate(self):
        d = self.input_dim
        for pos, u in enumerate(self.units):
            if u.idx != d + pos:
                raise NetsynthError("unit ids must be contiguous from input_dim")
            for src, _w in u.incoming:
                if not (0 <= src < u.idx):
                    raise NetsynthError("incoming sources must precede the unit")
            if u.activation == PERIODIC and u.sigma is None:
                raise NetsynthError("periodic unit without a SigmaSpec")
            if u.activation == POLYNOMIAL and not u.coeffs:
                raise NetsynthError("polynomial unit without coefficients")
        out_set = set(self.outputs)
        if not out_set:
            raise NetsynthError("a network needs at least one output unit")
        for oid in self.outputs:
            u = self.units[oid - d]
            if u.activation != IDENTITY:
                raise NetsynthError("output units must have identity activation")

    @property
    def output_id(self):
        return self.outputs[0]

    def unit(self, uid: int) -> Unit:
        return self.units[uid - self.input_dim]

    def hidden_units(self) -> Iterable[Unit]:
        outs = set(self.outputs)
        return (u for u in self.units if u.idx not in outs)

    def __repr__(self):
        return (
            f"Network(d={self.input_dim}, units={len(self.units)}, "
            f"outputs={len(self.outputs)}, meta={self.meta.get('variant')!r})"
        )


@dataclass
class ParamCounts:
    W: int
    L: int
    width: int


def count_params(net: Network) -> ParamCounts:
    """(W, L, width) under the fixed counting convention.

    W counts one parameter per connection, bias and unit over non-readout
    units; L is the number of hidden layers (longest-path depth, inputs at
    layer 0); width is the maximum number of non-readout units in a layer.
    """
    W = 0
    per_layer: dict[int, int] = {}
    L = 0
    for u in net.hidden_units():
        W += len(u.incoming) + 2
        lay = net.layer_of[u.idx]
        per_layer[lay] = per_layer.get(lay, 0) + 1
        L = max(L, lay)
    width = max(per_layer.values(), default=0)
    return ParamCounts(W=W, L=L, width=width)


# ---------------------------------------------------------------------------
# Affine expressions and the builder


class Expr:
    """Affine combination of unit outputs: sum(coeff * unit) + const.

    Coefficients are exact rationals; the constant may be rational or a
    big float (only deliberate seed-weight paths use the latter).
    """

    __slots__ = ("terms", "const")

    def __init__(self, terms=None, const=0):
        self.terms = dict(terms or {})
        self.const = const if isinstance(const, (mpq, mpfr)) else rat(const)

    @staticmethod
    def constant(c) -> "Expr":
        return Expr({}, c if isinstance(c, (mpq, mpfr)) else rat(c))

    def __add__(self, other):
        if not isinstance(other, Expr):
            other = Expr.constant(other)
        t = dict(self.terms)
        for k, v in other.terms.items():
            nv = t.get(k, 0) + v
            if nv == 0:
                t.pop(k, None)
            else:
                t[k] = nv
        return Expr(t, self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return Expr({k: -v for k, v in self.terms.items()}, -self.const)

    def __sub__(self, other):
        if not isinstance(other, Expr):
            other = Expr.constant(other)
        return self + (-other)

    def __rsub__(self, other):
        return Expr.constant(other) + (-self)

    def __mul__(self, c):
        if isinstance(c, Expr):
            raise NetsynthError("Expr*Expr is not affine; use a product gadget")
        c = c if isinstance(c, (mpq, mpfr)) else rat(c)
        if c == 0:
            return Expr({}, 0)
        return Expr({k: v * c for k, v in self.terms.items()}, self.const * c)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1 / rat(c))


class NetBuilder:
    """Incremental constructor: materialize units, keep signals as Exprs."""

    def __init__(self, input_dim: int):
        self.input_dim = input_dim
        self._units: list[Unit] = []

    def x(self, i: int) -> Expr:
        if not (0 <= i < self.input_dim):
            raise DimensionMismatch(f"input index {i} out of range")
        return Expr({i: rat(1)}, 0)

    def inputs(self) -> list[Expr]:
        return [self.x(i) for i in range(self.input_dim)]

    def _add(self, activation, expr: Expr, sigma=None, coeffs=()) -> Expr:
        uid = self.input_dim + len(self._units)
        incoming = tuple(sorted(expr.terms.items()))
        self._units.append(
            Unit(uid, activation, incoming, expr.const, sigma, tuple(coeffs))
        )
        return Expr({uid: rat(1)}, 0)

    def relu(self, expr: Expr) -> Expr:
        return self._add(RELU, expr)

    def identity(self, expr: Expr) -> Expr:
        return self._add(IDENTITY, expr)

    def register_nonneg(self, expr: Expr) -> Expr:
        """Materialize a provably nonnegative signal as one relu unit, so
        downstream consumers reference a single node instead of folding the
        whole affine history (keeps connection counts linear)."""
        return self.relu(expr)

    def register_signed(self, expr: Expr) -> Expr:
        """Materialize a signal of unknown sign exactly as relu(x)-relu(-x)."""
        return self.relu(expr) - self.relu(-expr)

    def periodic(self, expr: Expr, sigma: SigmaSpec) -> Expr:
        return self._add(PERIODIC, expr, sigma=sigma)

    def poly(self, expr: Expr, coeffs) -> Expr:
        cs = tuple(rat(c) for c in coeffs)
        return self._add(POLYNOMIAL, expr, coeffs=cs)

    def inline(self, net: Network, input_exprs: Sequence[Expr]) -> list[Expr]:
        """Splice another network's computation into this builder.

        Readout units of the inner network are folded into affine
        expressions rather than materialized.
        """
        if len(input_exprs) != net.input_dim:
            raise ArityMismatch(
                f"inline expects {net.input_dim} inputs, got {len(input_exprs)}"
            )
        mapping: dict[int, Expr] = {i: e for i, e in enumerate(input_exprs)}
        outs = set(net.outputs)
        for u in net.units:
            e = Expr({}, u.bias)
            for src, w in u.incoming:
                e = e + mapping[src] * w
            if u.idx in outs:
                mapping[u.idx] = e
            elif u.activation == IDENTITY:
                mapping[u.idx] = self.identity(e)
            elif u.activation == RELU:
                mapping[u.idx] = self.relu(e)
            elif u.activation == PERIODIC:
                mapping[u.idx] = self.periodic(e, u.sigma)
            elif u.activation == POLYNOMIAL:
                mapping[u.idx] = self.poly(e, u.coeffs)
            else:
                raise NetsynthError(f"unknown activation {u.activation!r}")
        return [mapping[oid] for oid in net.outputs]

    def finish(self, outputs, meta=None, layer_of=None) -> Network:
        """Materialize readout units for the given output Exprs."""
        if isinstance(outputs, Expr):
            outputs = [outputs]
        out_ids = []
        for e in outputs:
            out_ids.append(self.input_dim + len(self._units))
            self._add(IDENTITY, e)
        if layer_of is None:
            layer_of = {}
            for u in self._units:
                srcs = [layer_of.get(s, 0) for s, _ in u.incoming]
                layer_of[u.idx] = (max(srcs) if srcs else 0) + 1
        return Network(self.input_dim, self._units, out_ids, layer_of, meta)


# ---------------------------------------------------------------------------
# Evaluation


def _check_point(net, x):
    if len(x) != net.input_dim:
        raise DimensionMismatch(
            f"point has {len(x)} coordinates, network expects {net.input_dim}"
        )


def _eval_rational(net: Network, x):
    values = [rat(v) for v in x]
    for u in net.units:
        acc = u.bias
        if isinstance(acc, mpfr):
            raise UnsupportedPrecision("big-float weight in rational mode")
        for src, w in u.incoming:
            acc = acc + w * values[src]
        if u.activation == RELU:
            acc = acc if acc > 0 else mpq(0)
        elif u.activation == PERIODIC:
            acc = u.sigma.eval_rational(acc)
        elif u.activation == POLYNOMIAL:
            h = mpq(0)
            for c in reversed(u.coeffs):
                h = h * acc + c
            acc = h
        values.append(acc)
    return [values[oid] for oid in net.outputs]


_BF_CACHE: "dict[tuple[int, int], list]" = {}


def _bf_compiled(net: Network, bits: int):
    """Per-precision mpfr conversion of all weights, cached per network."""
    key = (id(net), bits)
    hit = _BF_CACHE.get(key)
    if hit is not None and hit[0] is net:
        return hit[1]
    compiled = []
    for u in net.units:
        inc = tuple((src, mpfr(w)) for src, w in u.incoming)
        coeffs = tuple(mpfr(c) for c in reversed(u.coeffs))
        compiled.append((u.activation, inc, mpfr(u.bias), u.sigma, coeffs))
    if len(_BF_CACHE) > 64:
        _BF_CACHE.clear()
    _BF_CACHE[key] = (net, compiled)
    return compiled


def _eval_bigfloat(net: Network, x, mode: BigFloat):
    with bigfloat_context(mode):
        compiled = _bf_compiled(net, mode.mantissa_bits)
        values = [mpfr(rat(v)) if not isinstance(v, mpfr) else +v for v in x]
        zero = mpfr(0)
        for activation, inc, bias, sigma, coeffs in compiled:
            acc = bias
            for src, w in inc:
                acc = acc + w * values[src]
            if activation == RELU:
                acc = acc if acc > 0 else zero
            elif activation == PERIODIC:
                acc = sigma.eval_bigfloat(acc)
            elif activation == POLYNOMIAL:
                h = zero
                for c in coeffs:
                    h = h * acc + c
                acc = h
            values.append(acc)
        return [values[oid] for oid in net.outputs]


def eval_outputs(net: Network, x, mode=RATIONAL) -> list:
    """Evaluate all designated outputs at one point."""
    _check_point(net, x)
    if mode == RATIONAL:
        return _eval_rational(net, x)
    if isinstance(mode, BigFloat):
        return _eval_bigfloat(net, x, mode)
    if mode == FLOAT64:
        X = np.array([[float(v) for v in x]])
        out = eval_batch(net, X)
        return [float(v) for v in out[0]]
    raise NetsynthError(f"unknown evaluation mode {mode!r}")


def eval_network(net: Network, x, mode=RATIONAL):
    """Evaluate the network; scalar for single-output nets, else a tuple."""
    outs = eval_outputs(net, x, mode)
    if len(outs) == 1:
        return outs[0]
    return tuple(outs)


# -- double-double helpers (vectorized ~106-bit arithmetic) -----------------

_SPLITTER = 134217729.0  # 2**27 + 1


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _quick_two_sum(a, b):
    s = a + b
    return s, b - (s - a)


def _two_prod(a, b):
    p = a * b
    t = _SPLITTER * a
    ah = t - (t - a)
    al = a - ah
    t = _SPLITTER * b
    bh = t - (t - b)
    bl = b - bh
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _dd_add(xh, xl, yh, yl):
    s, e = _two_sum(xh, yh)
    e = e + xl + yl
    return _quick_two_sum(s, e)


def _dd_mul(xh, xl, yh, yl):
    p, e = _two_prod(xh, yh)
    e = e + xh * yl + xl * yh
    return _quick_two_sum(p, e)


def _const_dd(w):
    hi = float(w)
    if isinstance(w, mpq):
        lo = float(w - mpq(hi))
    elif isinstance(w, mpfr):
        lo = float(w - mpfr(hi))
    else:
        lo = 0.0
    return hi, lo


def _eval_batch_dd(net: Network, X: np.ndarray) -> np.ndarray:
    """Double-double batch evaluation: ~106-bit compensated arithmetic.

    Needed because digit-extraction subnetworks have condition numbers of
    order base**T, which exceeds double precision at the scales we sweep.
    Periodic units are not supported here (use exact pointwise modes)."""
    n = X.shape[0]
    vals = [(X[:, i].copy(), np.zeros(n)) for i in range(net.input_dim)]
    for u in net.units:
        bh, bl = _const_dd(u.bias)
        acch = np.full(n, bh)
        accl = np.full(n, bl)
        for src, w in u.incoming:
            wh, wl = _const_dd(w)
            vh, vl = vals[src]
            ph, pl = _dd_mul(vh, vl, wh, wl)
            acch, accl = _dd_add(acch, accl, ph, pl)
        if u.activation == RELU:
            neg = (acch < 0) | ((acch == 0) & (accl < 0))
            acch = np.where(neg, 0.0, acch)
            accl = np.where(neg, 0.0, accl)
        elif u.activation == POLYNOMIAL:
            hh = np.zeros(n)
            hl = np.zeros(n)
            for c in reversed(u.coeffs):
                hh, hl = _dd_mul(hh, hl, acch, accl)
                ch, cl = _const_dd(c)
                hh, hl = _dd_add(hh, hl, np.full(n, ch), np.full(n, cl))
            acch, accl = hh, hl
        elif u.activation == PERIODIC:
            raise UnsupportedPrecision(
                "periodic units are not supported in double-double batch mode"
            )
        vals.append((acch, accl))
    return np.stack([vals[oid][0] + vals[oid][1] for oid in net.outputs], axis=1)


def eval_batch(net: Network, X: np.ndarray, compensated: bool = False) -> np.ndarray:
    """Vectorized float64 evaluation over a batch of points.

    Measurement-only mode: results carry double-precision rounding and are
    never used for exactness claims.  Returns shape (n_points, n_outputs).
    ``compensated=True`` switches to double-double arithmetic (~106 bits),
    which the digit-extraction subnetworks require.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != net.input_dim:
        raise DimensionMismatch(
            f"batch has {X.shape[1]} columns, network expects {net.input_dim}"
        )
    if compensated:
        return _eval_batch_dd(net, X)
    values: list[np.ndarray] = [X[:, i] for i in range(net.input_dim)]
    for u in net.units:
        acc = np.full(X.shape[0], float(u.bias))
        for src, w in u.incoming:
            acc += float(w) * values[src]
        if u.activation == RELU:
            acc = np.maximum(acc, 0.0)
        elif u.activation == PERIODIC:
            acc = u.sigma.eval_float_array(acc)
        elif u.activation == POLYNOMIAL:
            h = np.zeros_like(acc)
            for c in reversed(u.coeffs):
                h = h * acc + float(c)
            acc = h
        values.append(acc)
    return np.stack([values[oid] for oid in net.outputs], axis=1)


# ---------------------------------------------------------------------------
# Combinators


def compose_serial(a: Network, b: Network, wiring=None) -> Network:
    """Feed a's outputs into b's inputs; result computes b after a.

    ``wiring[j]`` names the a-output index feeding b's input j (identity
    wiring by default).
    """
    if wiring is None:
        if len(a.outputs) != b.input_dim:
            raise ArityMismatch(
                f"a has {len(a.outputs)} outputs but b expects {b.input_dim} inputs"
            )
        wiring = list(range(b.input_dim))
    nb = NetBuilder(a.input_dim)
    a_outs = nb.inline(a, nb.inputs())
    b_ins = [a_outs[j] for j in wiring]
    b_outs = nb.inline(b, b_ins)
    return nb.finish(b_outs, meta={"composed": "serial"})


def compose_parallel(nets: Sequence[Network], weights) -> Network:
    """Weighted sum of scalar networks sharing one input space."""
    if not nets:
        raise ArityMismatch("compose_parallel needs at least one network")
    if len(nets) != len(weights):
        raise ArityMismatch("one weight per network required")
    d = nets[0].input_dim
    for n in nets:
        if n.input_dim != d:
            raise ArityMismatch("networks must share input_dim")
        if len(n.outputs) != 1:
            raise ArityMismatch("compose_parallel expects scalar networks")
    nb = NetBuilder(d)
    xs = nb.inputs()
    acc = Expr.constant(0)
    for n, w in zip(nets, weights):
        (out,) = nb.inline(n, xs)
        acc = acc + out * rat(w)
    return nb.finish(acc, meta={"composed": "parallel"})


# ---------------------------------------------------------------------------
# Serialization (structured text; bit-exact round trip)


def _weight_to_jsonable(w):
    if isinstance(w, mpfr):
        m, e = w.as_mantissa_exp()
        return {"man": hex(int(m)), "exp": int(e), "prec": w.precision}
    q = rat(w)
    return [str(num(q)), str(den(q))]


def _weight_from_jsonable(obj):
    if isinstance(obj, dict):
        m = int(obj["man"], 16)
        prec = int(obj["prec"])
        with gmpy2.context(precision=max(prec, abs(m).bit_length() + 1)):
            v = mpfr(m) * mpfr(2) ** int(obj["exp"])
        return gmpy2.mpfr(v, prec)
    return mpq(int(obj[0]), int(obj[1]))


def _meta_to_jsonable(value):
    if isinstance(value, mpq):
        return {"$rat": f"{num(value)}/{den(value)}"}
    if isinstance(value, mpfr):
        return {"$bf": _weight_to_jsonable(value)}
    if isinstance(value, dict):
        return {k: _meta_to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_meta_to_jsonable(v) for v in value]
    if isinstance(value, (int, float, str, bool)) or value is None:
        return value
    return str(value)


def _meta_from_jsonable(value):
    if isinstance(value, dict):
        if set(value) == {"$rat"}:
            return rat_from_str(value["$rat"])
        if set(value) == {"$bf"}:
            return _weight_from_jsonable(value["$bf"])
        return {k: _meta_from_jsonable(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_meta_from_jsonable(v) for v in value]
    return value


def network_to_json(net: Network) -> str:
    """Serialize to a structured text document; round-trips bit-exactly."""
    units = []
    for u in net.units:
        d = {
            "id": u.idx,
            "activation": u.activation,
            "incoming": [[src] + _as_weight_fields(w) for src, w in u.incoming],
            "bias": _weight_to_jsonable(u.bias),
        }
        if u.sigma is not None:
            d["sigma"] = u.sigma.to_jsonable()
        if u.coeffs:
            d["coeffs"] = [_weight_to_jsonable(c) for c in u.coeffs]
        units.append(d)
    doc = {
        "format": "netsynth-network/1",
        "input_dim": net.input_dim,
        "units": units,
        "output_id": net.outputs[0] if len(net.outputs) == 1 else list(net.outputs),
        "layers": [net.layer_of[u.idx] for u in net.units],
        "meta": _meta_to_jsonable(net.meta),
    }
    return json.dumps(doc, separators=(",", ":"), sort_keys=False)


def _as_weight_fields(w):
    enc = _weight_to_jsonable(w)
    if isinstance(enc, dict):
        return [enc]
    return enc


def network_from_json(text: str) -> Network:
    doc = json.loads(text)
    if doc.get("format") != "netsynth-network/1":
        raise NetsynthError("not a netsynth network document")
    d = doc["input_dim"]
    units = []
    for ud in doc["units"]:
        inc = []
        for entry in ud["incoming"]:
            src = entry[0]
            if len(entry) == 2 and isinstance(entry[1], dict):
                inc.append((src, _weight_from_jsonable(entry[1])))
            else:
                inc.append((src, mpq(int(entry[1]), int(entry[2]))))
        sigma = SigmaSpec.from_jsonable(ud["sigma"]) if "sigma" in ud else None
        coeffs = tuple(_weight_from_jsonable(c) for c in ud.get("coeffs", []))
        units.append(
            Unit(
                ud["id"],
                ud["activation"],
                tuple(inc),
                _weight_from_jsonable(ud["bias"]),
                sigma,
                coeffs,
            )
        )
    out = doc["output_id"]
    outputs = [out] if isinstance(out, int) else list(out)
    layer_of = {u.idx: lay for u, lay in zip(units, doc["layers"])}
    return Network(d, units, outputs, layer_of, _meta_from_jsonable(doc["meta"]))
