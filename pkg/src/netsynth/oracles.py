"""Target-function oracles with derivative access and smoothness certification.

An oracle wraps a concrete function family and exposes exact rational
derivative values (transcendental families are snapped once to 512-bit
dyadic rationals, far below every tolerance in play) plus fast vectorized
float evaluation for measurement.  Every oracle is rescaled so that its
numerically certified smoothness norm is at most 1 on the *extended* cube
[-1, 2]^d: the per-cube coefficient coding walks up to one coarse cell
outside the unit cube, so the smoothness promise must cover that margin.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from math import factorial

import gmpy2
import numpy as np
from gmpy2 import mpq

from .errors import NetsynthError
from .scalars import mpfr_to_exact_rational, rat, rat_ceil, scale_power

__all__ = [
    "FunctionOracle",
    "corpus",
    "multi_indices",
    "mi_factorial",
    "taylor_poly_value",
    "estimate_holder_norm",
]

SNAP_BITS = 512
DOMAIN_LO, DOMAIN_HI = -1.0, 2.0


def multi_indices(d: int, max_total: int):
    """All multi-indices with |k| <= max_total, graded lexicographic order."""
    out = []
    for total in range(max_total + 1):
        for k in product(range(total + 1), repeat=d):
            if sum(k) == total:
                out.append(k)
    return out


def mi_factorial(k) -> int:
    f = 1
    for ki in k:
        f *= factorial(ki)
    return f


def taylor_poly_value(coeffs: dict, center, x):
    """Evaluate sum_k coeffs[k]/k! * (x - center)^k exactly."""
    acc = rat(0)
    diffs = [rat(xi) - rat(ci) for xi, ci in zip(x, center)]
    for k, a in coeffs.items():
        mono = rat(1)
        for ki, di in zip(k, diffs):
            mono = mono * di**ki
        acc = acc + rat(a) / mi_factorial(k) * mono
    return acc


# ---------------------------------------------------------------------------
# Families


class _Family:
    """Raw (unscaled) function; subclasses provide exact and batch paths."""

    exact = True

    def deriv_exact(self, k, x):
        raise NotImplementedError

    def deriv_batch(self, k, X):
        raise NotImplementedError


class _Zero(_Family):
    def deriv_exact(self, k, x):
        return rat(0)

    def deriv_batch(self, k, X):
        return np.zeros(X.shape[0])


class _Poly(_Family):
    """Sum of rational-coefficient monomials."""

    def __init__(self, coeffs: dict):
        self.coeffs = {tuple(k): rat(c) for k, c in coeffs.items()}

    def deriv_exact(self, k, x):
        xs = [rat(v) for v in x]
        acc = rat(0)
        for mono, c in self.coeffs.items():
            term = c
            ok = True
            for i, (e, ki) in enumerate(zip(mono, k)):
                if ki > e:
                    ok = False
                    break
                fall = 1
                for j in range(ki):
                    fall *= e - j
                term = term * fall * xs[i] ** (e - ki)
            if ok:
                acc = acc + term
        return acc

    def deriv_batch(self, k, X):
        acc = np.zeros(X.shape[0])
        for mono, c in self.coeffs.items():
            term = np.full(X.shape[0], float(c))
            ok = True
            for i, (e, ki) in enumerate(zip(mono, k)):
                if ki > e:
                    ok = False
                    break
                fall = 1
                for j in range(ki):
                    fall *= e - j
                term = term * fall * X[:, i] ** (e - ki)
            if ok:
                acc += term
        return acc


class _TrigProduct(_Family):
    """amp * prod_i sin(pi * (n_i x_i + phase_i)); phases rational."""

    exact = False

    def __init__(self, amp, freqs, phases):
        self.amp = rat(amp)
        self.freqs = [int(n) for n in freqs]
        self.phases = [rat(p) for p in phases]

    def deriv_exact(self, k, x):
        with gmpy2.context(precision=SNAP_BITS):
            pi = gmpy2.const_pi()
            acc = gmpy2.mpfr(self.amp)
            for i, (n, ph, ki) in enumerate(zip(self.freqs, self.phases, k)):
                arg = pi * (gmpy2.mpfr(n * rat(x[i]) + ph + mpq(ki, 2)))
                acc *= (pi * n) ** ki * gmpy2.sin(arg)
            return mpfr_to_exact_rational(acc)

    def deriv_batch(self, k, X):
        acc = np.full(X.shape[0], float(self.amp))
        for i, (n, ph, ki) in enumerate(zip(self.freqs, self.phases, k)):
            acc = acc * (np.pi * n) ** ki * np.sin(
                np.pi * (n * X[:, i] + float(ph) + ki / 2.0)
            )
        return acc


class _GaussProduct(_Family):
    """amp * exp(-s * sum (x_i - c_i)^2)."""

    exact = False

    def __init__(self, amp, s, centers):
        self.amp = rat(amp)
        self.s = rat(s)
        self.centers = [rat(c) for c in centers]

    def _hermite_coeffs(self, order):
        # p_0 = 1, p_{j+1} = p_j' - 2 s t p_j  (polynomials in t = x - c)
        p = [rat(1)]
        for _ in range(order):
            q = [rat(0)] * (len(p) + 1)
            for e, c in enumerate(p):
                if e >= 1:
                    q[e - 1] += c * e
                q[e + 1] -= 2 * self.s * c
            p = q
        return p

    def deriv_exact(self, k, x):
        with gmpy2.context(precision=SNAP_BITS):
            acc = gmpy2.mpfr(self.amp)
            for i, ki in enumerate(k):
                t = rat(x[i]) - self.centers[i]
                poly = self._hermite_coeffs(ki)
                pv = rat(0)
                for c in reversed(poly):
                    pv = pv * t + c
                acc *= gmpy2.mpfr(pv) * gmpy2.exp(-gmpy2.mpfr(self.s * t * t))
            return mpfr_to_exact_rational(acc)

    def deriv_batch(self, k, X):
        acc = np.full(X.shape[0], float(self.amp))
        for i, ki in enumerate(k):
            t = X[:, i] - float(self.centers[i])
            poly = [float(c) for c in self._hermite_coeffs(ki)]
            pv = np.zeros(X.shape[0])
            for c in reversed(poly):
                pv = pv * t + c
            acc = acc * pv * np.exp(-float(self.s) * t * t)
        return acc


class _Takagi(_Family):
    """Rough representative: sum_j lam^(-r j) * dist(lam^j * mean(x), Z).

    Exact rational at rational points; only order-0 derivatives exist, so
    this family serves the r <= 1 corpus.  lam is 4 for half-integer r so
    the level weights stay rational.
    """

    def __init__(self, r, levels):
        self.r = rat(r)
        self.levels = levels
        self.lam = 4 if rat(r).denominator == 2 else 2

    def _psi(self, t):
        from .scalars import rat_floor

        n = rat(t)
        f = n - rat_floor(n)
        return min(f, 1 - f)

    def deriv_exact(self, k, x):
        if any(k):
            raise NetsynthError("rough representative has no derivatives")
        d = len(x)
        u = sum(rat(v) for v in x) / d
        acc = rat(0)
        for j in range(self.levels):
            w = 1 / scale_power(self.lam, self.r * j)
            acc = acc + w * self._psi(self.lam**j * u)
        return acc

    def deriv_batch(self, k, X):
        if any(k):
            raise NetsynthError("rough representative has no derivatives")
        u = X.mean(axis=1)
        acc = np.zeros(X.shape[0])
        for j in range(self.levels):
            w = float(1 / scale_power(self.lam, self.r * j))
            t = self.lam**j * u
            f = t - np.floor(t)
            acc += w * np.minimum(f, 1 - f)
        return acc


# ---------------------------------------------------------------------------
# Oracle wrapper


@dataclass
class FunctionOracle:
    """Scaled oracle promising smoothness-ball membership on [-1,2]^d."""

    fid: str
    d: int
    r: mpq
    family: _Family
    norm_scale: mpq  # values returned are family values / norm_scale
    declared_norm_bound: mpq  # certified raw-norm bound (before scaling)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def exact(self) -> bool:
        return self.family.exact

    def max_order(self) -> int:
        return int(rat_ceil(self.r)) - 1

    def derivative(self, k, x):
        k = tuple(int(v) for v in k)
        key = (k, tuple(rat(v) for v in x))
        hit = self._cache.get(key)
        if hit is None:
            hit = self.family.deriv_exact(k, key[1]) / self.norm_scale
            self._cache[key] = hit
        return hit

    def evaluate(self, x):
        return self.derivative((0,) * self.d, x)

    def derivative_batch(self, k, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        return self.family.deriv_batch(tuple(k), X) / float(self.norm_scale)

    def evaluate_batch(self, X):
        return self.derivative_batch((0,) * self.d, X)


def estimate_holder_norm(family: _Family, d: int, r, rng: np.random.Generator,
                         n_grid: int = 2000, n_pairs: int = 20000) -> float:
    """Numerical norm estimate on [-1,2]^d: grid/random max of |D^k| for
    |k| <= ceil(r)-1 plus the top-order Holder quotient over random pairs."""
    rr = rat(r)
    kk = int(rat_ceil(rr)) - 1
    alpha = float(rr) - kk
    X = rng.uniform(DOMAIN_LO, DOMAIN_HI, size=(n_grid, d))
    worst = 0.0
    for k in multi_indices(d, kk):
        worst = max(worst, float(np.max(np.abs(family.deriv_batch(k, X)))))
    A = rng.uniform(DOMAIN_LO, DOMAIN_HI, size=(n_pairs, d))
    B = rng.uniform(DOMAIN_LO, DOMAIN_HI, size=(n_pairs, d))
    dist = np.linalg.norm(A - B, axis=1)
    keep = dist > 1e-9
    A, B, dist = A[keep], B[keep], dist[keep]
    for k in multi_indices(d, kk):
        if sum(k) != kk:
            continue
        va = family.deriv_batch(k, A)
        vb = family.deriv_batch(k, B)
        quot = np.abs(va - vb) / dist**alpha
        worst = max(worst, float(np.max(quot)))
    return worst


def _scaled(fid, d, r, family, rng) -> FunctionOracle:
    est = estimate_holder_norm(family, d, r, rng)
    from .scalars import rat_from_str

    bound = rat_from_str(np.format_float_positional(est * 1.1, precision=12))
    bound = max(bound, rat(1, 10**6))
    return FunctionOracle(fid, d, rat(r), family, norm_scale=bound,
                          declared_norm_bound=bound)


def corpus(d: int, r, seed: int = 0):
    """Deterministic oracle corpus for one (d, r): smooth representatives
    plus, for r <= 1, a rough multi-scale one.  All rescaled into the ball."""
    rr = rat(r)
    if d > 3 or rr > 4:
        raise NetsynthError("corpus supports d <= 3 and r <= 4")
    rng = np.random.default_rng(seed + 1000 * d)
    import random as _random

    coeff_rng = _random.Random(f"{seed}|{d}|{rr}")

    def rq(lo=-8, hi=8, den=8):
        return mpq(coeff_rng.randrange(lo, hi + 1), den)

    oracles = []
    zero = FunctionOracle(f"zero", d, rr, _Zero(), rat(1), rat(1))
    oracles.append(zero)

    lin = _Poly({tuple(1 if j == i else 0 for j in range(d)): rq(1, 8) for i in range(d)})
    oracles.append(_scaled("linear", d, rr, lin, rng))

    monos = multi_indices(d, 3)
    poly = _Poly({k: rq() for k in monos if sum(k) > 0})
    oracles.append(_scaled("poly3", d, rr, poly, rng))

    trig = _TrigProduct(1, [coeff_rng.choice([1, 1, 2]) for _ in range(d)],
                        [rq(0, 7, 8) for _ in range(d)])
    oracles.append(_scaled("trig", d, rr, trig, rng))

    gauss = _GaussProduct(1, rat(coeff_rng.randrange(2, 5), 2),
                          [rq(2, 6, 8) for _ in range(d)])
    oracles.append(_scaled("gauss", d, rr, gauss, rng))

    if rr <= 1:
        takagi = _Takagi(rr, levels=12)
        oracles.append(_scaled("takagi", d, rr, takagi, rng))

    return oracles
