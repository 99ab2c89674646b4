"""Triangulation location, spikes, interpolants, subgrids."""

import random

import pytest
from gmpy2 import mpq

from netsynth.errors import NetsynthError
from netsynth.network import eval_network
from netsynth.partition import (
    Subgrid,
    build_constant_interpolant,
    build_linear_interpolant,
    build_spike,
    knot_for,
    patch_contains,
    simplex_contains,
    simplex_of,
    subgrid_knots,
)
from netsynth.scalars import rat


def rand_point(rng, d, denom=720):
    return [rat(rng.randrange(0, denom + 1), denom) for _ in range(d)]


class TestSimplexOf:
    def test_interior_point_2d(self):
        s = simplex_of([rat(3, 10), rat(7, 10)], 1)
        assert s.base == (0, 0)
        assert s.perm == (0, 1)  # first coordinate has the smaller offset

    def test_interval_location_1d(self):
        s = simplex_of([rat(3, 5)], 4)
        assert s.base == (2,)

    def test_tie_break_lexicographic(self):
        s = simplex_of([rat(1, 2), rat(1, 2)], 1)
        assert s.base == (0, 0)
        assert s.perm == (0, 1)
        # boundary between cells picks the smaller base
        s = simplex_of([rat(1, 2)], 4)
        assert s.base == (1,)

    def test_containment(self):
        rng = random.Random(0)
        for d in (1, 2, 3):
            for _ in range(200):
                x = rand_point(rng, d)
                for N in (1, 3, 5):
                    assert simplex_contains(simplex_of(x, N), x)


class TestSpike:
    def test_knot_values_1d(self):
        net = build_spike(2, (1,), 1)
        assert eval_network(net, [rat(1, 2)]) == 1
        assert eval_network(net, [rat(0)]) == 0
        assert eval_network(net, [rat(1, 4)]) == mpq(1, 2)

    def test_vanishes_at_other_knots(self):
        for d in (1, 2, 3):
            N = 3
            center = tuple(1 for _ in range(d))
            net = build_spike(N, center, d)
            from itertools import product

            for n in product(range(N + 1), repeat=d):
                expected = 1 if n == center else 0
                x = [rat(ni, N) for ni in n]
                assert eval_network(net, x) == expected

    def test_partition_of_unity_exact(self):
        """Sum of all hats is exactly 1 everywhere (rational mode)."""
        from itertools import product

        rng = random.Random(1)
        for d, N in [(1, 5), (2, 3), (3, 2)]:
            nets = [
                build_spike(N, n, d) for n in product(range(N + 1), repeat=d)
            ]
            for _ in range(50):
                x = rand_point(rng, d)
                total = sum(eval_network(net, x) for net in nets)
                assert total == 1

    def test_linear_on_each_simplex(self):
        """Value at a simplex midpoint equals the mean of vertex values."""
        net = build_spike(2, (1, 1), 2)
        s = simplex_of([rat(3, 8), rat(1, 4)], 2)
        verts = [list(s.base)]
        acc = list(s.base)
        for i in reversed(s.perm):
            acc = list(acc)
            acc[i] += 1
            verts.append(acc)
        vals = [eval_network(net, [rat(v, 2) for v in vert]) for vert in verts]
        mid = [rat(sum(vert[i] for vert in verts), 2 * len(verts)) for i in range(2)]
        assert eval_network(net, mid) == sum(vals) / len(vals)


class TestLinearInterpolant:
    def test_hat_sum_midpoint(self):
        net = build_linear_interpolant([(0,), (1,)], [2, 3], 1, 1)
        assert eval_network(net, [rat(1, 2)]) == mpq(5, 2)

    def test_zero_off_support(self):
        net = build_linear_interpolant([(0,)], [7], 4, 1)
        assert eval_network(net, [rat(1, 2)]) == 0
        assert eval_network(net, [rat(0)]) == 7

    def test_duplicate_knots_rejected(self):
        with pytest.raises(NetsynthError):
            build_linear_interpolant([(0,), (0,)], [1, 2], 1, 1)


class TestConstantInterpolant:
    def test_patch_plateau(self):
        sg = Subgrid((0,), 6)
        net = build_constant_interpolant(sg, [(0,), (3,), (6,)], [1, 1, 1])
        assert eval_network(net, [rat(11, 20)]) == 1  # inside patch of knot 3
        assert eval_network(net, [rat(1, 2)]) == 1

    def test_distinct_values(self):
        sg = Subgrid((0,), 6)
        net = build_constant_interpolant(sg, [(0,), (3,), (6,)], [10, 20, 30])
        assert eval_network(net, [rat(1, 20)]) == 10
        assert eval_network(net, [rat(19, 20)]) == 30

    def test_constant_on_whole_patch_random(self):
        rng = random.Random(2)
        sg = Subgrid((1, 1), 4)
        knots = subgrid_knots((1, 1), 4, 2)
        vals = [rat(i + 1, 3) for i in range(len(knots))]
        net = build_constant_interpolant(sg, knots, vals)
        hits = 0
        for _ in range(400):
            x = rand_point(rng, 2)
            n = knot_for(x, sg)
            if n is None:
                continue
            hits += 1
            v = vals[knots.index(n)]
            assert eval_network(net, x) == v
        assert hits > 50

    def test_incompatible_knots_rejected(self):
        sg = Subgrid((0,), 6)
        with pytest.raises(NetsynthError):
            build_constant_interpolant(sg, [(1,)], [1])


class TestSubgrids:
    def test_knots_1d(self):
        assert subgrid_knots((0,), 6, 1) == [(0,), (3,), (6,)]
        assert subgrid_knots((2,), 6, 1) == [(2,), (5,)]

    def test_union_is_disjoint_cover(self):
        all_knots = set()
        for q in range(3):
            ks = subgrid_knots((q,), 6, 1)
            assert all_knots.isdisjoint(ks)
            all_knots.update(ks)
        assert all_knots == {(i,) for i in range(7)}

    def test_knot_for(self):
        sg = Subgrid((0,), 6)
        assert knot_for([rat(11, 20)], sg) == (3,)
        assert knot_for([rat(3, 10)], sg) is None
        assert knot_for([rat(1, 2)], sg) == (3,)

    def test_knot_for_agrees_with_patch_scan(self):
        rng = random.Random(3)
        for d in (1, 2):
            for q in [(0,) * d, (1,) * d, (2, 0)[:d]]:
                sg = Subgrid(tuple(q), 5)
                knots = sg.knots()
                for _ in range(150):
                    x = rand_point(rng, d)
                    by_scan = [n for n in knots if patch_contains(n, x, 5)]
                    got = knot_for(x, sg)
                    if by_scan:
                        assert got == by_scan[0] and len(by_scan) == 1
                    else:
                        assert got is None

    def test_filter_partition_of_unity(self):
        """All-ones interpolants over the 3^d subgrids sum to 1 exactly."""
        from itertools import product

        rng = random.Random(4)
        for d, N in [(1, 6), (2, 4)]:
            nets = []
            for q in product(range(3), repeat=d):
                ks = subgrid_knots(q, N, d)
                nets.append(build_linear_interpolant(ks, [1] * len(ks), N, d))
            for _ in range(60):
                x = rand_point(rng, d)
                assert sum(eval_network(n, x) for n in nets) == 1
                covering = sum(
                    1 for q in product(range(3), repeat=d)
                    if knot_for(x, Subgrid(q, N)) is not None
                )
                assert covering >= 1
