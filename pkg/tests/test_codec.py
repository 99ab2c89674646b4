"""Coefficient tables, correction-digit codec, and the network decoder."""

import random

import pytest
from gmpy2 import mpq

from netsynth.codec import (
    EncodingWeight,
    build_decoder_net,
    coeff_tolerance,
    decode_cube,
    encode_cube,
    knot_traversal,
    taylor_orders,
    taylor_table,
    transfer_coeffs,
)
from netsynth.gadgets import DigitStream
from netsynth.network import eval_outputs
from netsynth.oracles import (
    FunctionOracle,
    corpus,
    mi_factorial,
    taylor_poly_value,
)
from netsynth.oracles import _Poly, _Takagi  # concrete families for fixtures
from netsynth.scalars import rat


def poly_oracle(coeffs, d, r, fid="p"):
    return FunctionOracle(fid, d, rat(r), _Poly(coeffs), rat(1), rat(1))


class TestTaylorTable:
    def test_square_function(self):
        f = poly_oracle({(2,): 1}, 1, 2)
        M = 4
        tab = taylor_table(f, M, [(m,) for m in range(5)])
        for m in range(5):
            assert tab.value((m,), (0,)) == mpq(m, M) ** 2
            assert tab.value((m,), (1,)) == 2 * mpq(m, M)

    def test_zero_function(self):
        f = corpus(1, 2, seed=0)[0]
        tab = taylor_table(f, 4, [(m,) for m in range(5)])
        assert all(v == 0 for v in tab.entries.values())

    def test_trig_value(self):
        [trig] = [o for o in corpus(1, 2, seed=0) if o.fid == "trig"]
        tab = taylor_table(trig, 4, [(2,)])
        got = tab.value((2,), (0,))
        want = trig.evaluate([rat(1, 2)])
        assert got == want


class TestTraversal:
    def test_line_order(self):
        assert knot_traversal((1,), 2, 4, 1) == [(0,), (1,), (2,), (3,), (4,)]

    def test_snake_2d(self):
        path = knot_traversal((1, 1), 2, 2, 2)
        assert len(path) == 9
        assert len(set(path)) == 9
        assert path[0] == (0, 0)  # lexicographically smallest corner
        for a, b in zip(path, path[1:]):
            diff = sorted(abs(x - y) for x, y in zip(a, b))
            assert diff == [0, 1]

    def test_relative_pattern_cell_independent(self):
        p1 = knot_traversal((1, 1), 2, 4, 2)
        p2 = knot_traversal((3, 1), 4, 8, 2)
        rel1 = [tuple(c - p1[0][i] for i, c in enumerate(m)) for m in p1]
        rel2 = [tuple(c - p2[0][i] for i, c in enumerate(m)) for m in p2]
        assert rel1 == rel2

    def test_divisibility_required(self):
        with pytest.raises(Exception):
            knot_traversal((1,), 2, 5, 1)


class TestTransfer:
    def test_worked_example(self):
        coeffs = {(0,): rat(1, 2), (1,): rat(1)}
        out = transfer_coeffs(coeffs, 0, +1, 10, 2)
        assert out[(0,)] == mpq(3, 5)  # 0.5 + 1.0/10
        assert out[(1,)] == 1

    def test_zero_is_fixed_point(self):
        coeffs = {(0, 0): rat(0), (1, 0): rat(0), (0, 1): rat(0)}
        out = transfer_coeffs(coeffs, 1, -1, 8, 2)
        assert all(v == 0 for v in out.values())

    def test_degenerate_order(self):
        out = transfer_coeffs({(0,): rat(7)}, 0, +1, 8, 1)
        assert out[(0,)] == 7

    def test_polynomial_shift_is_exact(self):
        """For a cubic with r=4 the shift rule has zero remainder."""
        f = poly_oracle({(3,): 1, (1,): rat(1, 3)}, 1, 4)
        M = 6
        tab = taylor_table(f, M, [(2,), (3,)])
        src = {k: tab.value((2,), k) for k in taylor_orders(1, 4)}
        out = transfer_coeffs(src, 0, +1, M, 4)
        for k in taylor_orders(1, 4):
            assert out[k] == tab.value((3,), k)


class TestEncodeDecode:
    def test_zero_function_all_corrections_zero(self):
        f = poly_oracle({}, 1, 2, fid="zero")
        path = knot_traversal((1,), 2, 8, 1)
        tab = taylor_table(f, 8, path)
        enc = encode_cube(tab, (1,), 2, 8, 2)
        for k, s in enc.streams.items():
            assert all(g == 3 for g in s.digits)
        assert all(v == 0 for v in enc.initials.values())

    def test_linear_function_first_order_exact(self):
        # perfect-square fine scale keeps half-integer tolerances rational
        f = poly_oracle({(1,): rat(1, 2)}, 1, rat(3, 2), fid="lin")
        path = knot_traversal((1,), 2, 16, 1)
        tab = taylor_table(f, 16, path)
        enc = encode_cube(tab, (1,), 2, 16, rat(3, 2))
        # constant first derivative transfers exactly: all corrections 0
        assert all(g == 3 for g in enc.streams[(1,)].digits)
        assert all(g == 3 for g in enc.streams[(0,)].digits)

    def test_certificate_on_corpus(self):
        """Decoded coefficients track the exact ones within tolerance, and
        all corrections stay within +-3, at small desk scales."""
        for d in (1, 2):
            for r in (rat(1), rat(2)):
                for f in corpus(d, r, seed=3)[:4]:
                    N, M = 2, 4
                    n = (1,) * d
                    path = knot_traversal(n, N, M, d)
                    tab = taylor_table(f, M, path)
                    enc = encode_cube(tab, n, N, M, r)
                    dec = decode_cube(enc)
                    for (m, k), v in dec.items():
                        tol = coeff_tolerance(M, k, r)
                        assert abs(tab.value(m, k) - v) <= tol

    def test_rough_function_uses_both_signs(self):
        f = [o for o in corpus(1, 1, seed=0) if o.fid == "takagi"][0]
        N, M = 2, 16
        n = (1,)
        path = knot_traversal(n, N, M, 1)
        tab = taylor_table(f, M, path)
        enc = encode_cube(tab, n, N, M, 1)
        signs = {g - 3 for g in enc.streams[(0,)].digits}
        assert any(s > 0 for s in signs) and any(s < 0 for s in signs)

    def test_decode_inverts_encode_bitexactly(self):
        f = corpus(1, 2, seed=1)[2]
        N, M = 2, 8
        n = (1,)
        tab = taylor_table(f, M, knot_traversal(n, N, M, 1))
        enc = encode_cube(tab, n, N, M, 2)
        dec = decode_cube(enc)
        # replaying encode over the decoded values reproduces the streams
        enc2 = encode_cube(tab, n, N, M, 2)
        assert enc2.streams == enc.streams and enc2.initials == enc.initials
        path = knot_traversal(n, N, M, 1)
        assert dec[(path[0], (0,))] == enc.initials[(0,)]

    def test_single_knot_cube(self):
        f = poly_oracle({(2,): 1}, 1, 2)
        N = M = 2
        n = (1,)
        path = knot_traversal(n, N, M, 1)
        assert len(path) == 3
        tab = taylor_table(f, M, path)
        enc = encode_cube(tab, n, N, M, 2)
        assert len(enc.streams[(0,)]) == 2

    def test_half_integer_smoothness(self):
        f = [o for o in corpus(1, rat(1, 2), seed=0) if o.fid == "takagi"][0]
        N, M = 2, 16  # M is a perfect square: tolerances stay rational
        n = (1,)
        tab = taylor_table(f, M, knot_traversal(n, N, M, 1))
        enc = encode_cube(tab, n, N, M, rat(1, 2))
        dec = decode_cube(enc)
        tol = coeff_tolerance(M, (0,), rat(1, 2))
        assert tol == rat(1, 4)
        for (m, k), v in dec.items():
            assert abs(tab.value(m, k) - v) <= tol

    def test_taylor_poly_deviation_bound(self):
        """Assembled approximate Taylor polynomials stay within
        (d+1)^(ceil(r)-1) * M^-r of the exact ones on the patch."""
        rng = random.Random(5)
        for d in (1, 2):
            r = rat(2)
            f = corpus(d, r, seed=2)[3]  # trig
            N, M = 2, 8
            n = (1,) * d
            path = knot_traversal(n, N, M, d)
            tab = taylor_table(f, M, path)
            enc = encode_cube(tab, n, N, M, r)
            dec = decode_cube(enc)
            bound = rat(d + 1) * scale_power_inv(M, r)
            orders = taylor_orders(d, r)
            for _ in range(40):
                m = path[rng.randrange(len(path))]
                center = [rat(mi, M) for mi in m]
                x = [c + rat(rng.randrange(-8, 9), 8 * M) for c in center]
                exact = {k: tab.value(m, k) for k in orders}
                approx = {k: dec[(m, k)] for k in orders}
                pv_exact = taylor_poly_value(exact, center, x)
                pv_approx = taylor_poly_value(approx, center, x)
                assert abs(pv_exact - pv_approx) <= bound


def scale_power_inv(M, r):
    from netsynth.scalars import scale_power

    return 1 / scale_power(M, rat(r))


class TestDecoderNet:
    def test_output_count(self):
        net = build_decoder_net(2, 8, 2, 1)
        T = len(knot_traversal((1,), 2, 8, 1))
        assert len(net.outputs) == T * len(taylor_orders(1, 2))

    def test_agrees_with_reference_decoder(self):
        rng = random.Random(9)
        for _ in range(30):
            N = 2
            ratio = rng.choice([2, 4, 8])
            M = N * ratio
            r = rng.choice([1, 2])
            orders = taylor_orders(1, r)
            path = knot_traversal((1,), N, M, 1)
            T = len(path) - 1
            streams = {
                k: DigitStream(7, tuple(rng.randrange(7) for _ in range(T)))
                for k in orders
            }
            initials = {k: rat(rng.randrange(-16, 17), 16) for k in orders}
            enc = EncodingWeight((1,), N, M, rat(r), 1, initials, streams)
            reference = decode_cube(enc)
            net = build_decoder_net(N, M, r, 1)
            inputs = [initials[k] for k in orders]
            packed = enc.packed_scalars()
            inputs += [packed[k] for k in orders]
            got = eval_outputs(net, inputs)
            i = 0
            for m in path:
                for k in orders:
                    assert got[i] == reference[(m, k)]
                    i += 1

    def test_depth_linear_in_traversal(self):
        from netsynth.network import count_params

        depths = []
        for ratio in (2, 4, 8):
            net = build_decoder_net(2, 2 * ratio, 1, 1)
            depths.append(count_params(net).L)
        d1, d2, d3 = depths
        assert d2 - d1 > 0
        assert (d3 - d2) == 2 * (d2 - d1)
