"""ReLU gadgets: ramps, squaring/product accuracy, digit extraction."""

import random

import pytest
from gmpy2 import mpq
from hypothesis import given, settings
from hypothesis import strategies as st

from netsynth.errors import GuardMarginError, NetsynthError
from netsynth.gadgets import (
    DigitStream,
    build_bit_extractor,
    build_product,
    build_square,
    build_threshold,
    encode_digits,
    gate_binary_exprs,
)
from netsynth.network import NetBuilder, count_params, eval_network, eval_outputs
from netsynth.scalars import rat


class TestThreshold:
    def test_ramp_values(self):
        net = build_threshold(rat(1, 10), 1)
        assert eval_network(net, [rat(12, 10)]) == 1
        assert eval_network(net, [rat(9, 10)]) == 0
        assert eval_network(net, [rat(105, 100)]) == mpq(1, 2)

    def test_invalid_width(self):
        with pytest.raises(NetsynthError):
            build_threshold(0, 1)


class TestSquare:
    @pytest.mark.parametrize("eps", ["1/100", "1/10000", "1/1000000"])
    def test_sup_error_on_grid(self, eps):
        e = rat(eps)
        net = build_square(e)
        worst = rat(0)
        for i in range(0, 2001):
            x = rat(i, 2000)
            err = abs(eval_network(net, [x]) - x * x)
            worst = max(worst, err)
        assert worst <= e

    def test_exact_endpoints(self):
        for eps in ["1/1000", "1/1000000"]:
            net = build_square(rat(eps))
            assert eval_network(net, [rat(0)]) == 0
            assert eval_network(net, [rat(1)]) == 1

    def test_midpoint_value(self):
        net = build_square(rat(1, 1000))
        v = eval_network(net, [rat(1, 2)])
        assert abs(v - rat(1, 4)) <= rat(1, 1000)

    def test_depth_grows_logarithmically(self):
        depths = []
        for k in (2, 4, 6, 8, 10):
            net = build_square(rat(1, 10**k))
            depths.append(count_params(net).L)
        # depth increase per decade of accuracy is bounded by a constant
        steps = [b - a for a, b in zip(depths, depths[1:])]
        assert max(steps) <= 5
        assert depths[-1] >= depths[0]


class TestProduct:
    @pytest.mark.parametrize(
        "x,y,B",
        [("1", "1", 1), ("1/2", "-1/2", 1), ("2", "2", 2)],
    )
    def test_known_products(self, x, y, B):
        eps = rat(1, 1000)
        net = build_product(eps, B)
        x, y = rat(x), rat(y)
        assert abs(eval_network(net, [x, y]) - x * y) <= eps

    def test_grid_error_bound(self):
        eps = rat(1, 500)
        B = 2
        net = build_product(eps, B)
        for i in range(0, 41, 2):
            for j in range(0, 41, 2):
                x = rat(-2) + rat(i, 10)
                y = rat(-2) + rat(j, 10)
                assert abs(eval_network(net, [x, y]) - x * y) <= eps


class TestBinaryGate:
    def test_exact_gating(self):
        b = NetBuilder(2)
        out = gate_binary_exprs(b, b.x(0), b.x(1), 4)
        net = b.finish(out)
        for bit in (0, 1):
            for v in ["-4", "-1/3", "0", "2/7", "4"]:
                got = eval_network(net, [rat(bit), rat(v)])
                assert got == rat(bit) * rat(v)


class TestDigitCodec:
    def test_encode_examples(self):
        s = DigitStream(7, (3, 5, 0))
        assert encode_digits(s) == mpq(3, 7) + mpq(5, 49) + mpq(1, 4802)
        assert encode_digits(DigitStream(7, (0,))) == mpq(1, 98)
        assert encode_digits(DigitStream(2, (1, 1))) == mpq(13, 16)

    def test_extractor_examples(self):
        net = build_bit_extractor(7, 3)
        w = encode_digits(DigitStream(7, (3, 5, 0)))
        assert eval_outputs(net, [w]) == [3, 5, 0]
        net = build_bit_extractor(7, 5)
        w = encode_digits(DigitStream(7, (0,) * 5))
        assert eval_outputs(net, [w]) == [0] * 5
        net = build_bit_extractor(2, 4)
        w = encode_digits(DigitStream(2, (1, 0, 1, 1)))
        assert eval_outputs(net, [w]) == [1, 0, 1, 1]

    def test_guard_margin_enforced(self):
        with pytest.raises(GuardMarginError):
            build_bit_extractor(7, 3, delta=rat(1, 4) / 7**3)

    @settings(max_examples=60, deadline=None)
    @given(
        st.integers(min_value=1, max_value=20),
        st.sampled_from([2, 7]),
        st.randoms(use_true_random=False),
    )
    def test_round_trip_property(self, T, base, rng):
        digits = tuple(rng.randrange(base) for _ in range(T))
        net = build_bit_extractor(base, T)
        got = eval_outputs(net, [encode_digits(DigitStream(base, digits))])
        assert tuple(got) == digits

    def test_round_trip_long_streams(self):
        rng = random.Random(11)
        for base in (2, 7):
            net_cache = {}
            for _ in range(40):
                T = rng.randrange(30, 51)
                if T not in net_cache:
                    net_cache[T] = build_bit_extractor(base, T)
                digits = tuple(rng.randrange(base) for _ in range(T))
                w = encode_digits(DigitStream(base, digits))
                assert tuple(eval_outputs(net_cache[T], [w])) == digits

    def test_extractor_depth_proportional_to_T(self):
        l4 = count_params(build_bit_extractor(7, 4)).L
        l8 = count_params(build_bit_extractor(7, 8)).L
        l16 = count_params(build_bit_extractor(7, 16)).L
        per_step = (l8 - l4) // 4
        assert per_step >= 1
        assert l16 - l8 == 8 * per_step
