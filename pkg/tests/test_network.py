"""Core IR: evaluation, composition, counting, serialization."""

import gmpy2
import numpy as np
import pytest
from gmpy2 import mpq

from netsynth.errors import (
    ArityMismatch,
    DimensionMismatch,
    UnsupportedPrecision,
)
from netsynth.network import (
    BigFloat,
    NetBuilder,
    SigmaSpec,
    compose_parallel,
    compose_serial,
    count_params,
    eval_batch,
    eval_network,
    network_from_json,
    network_to_json,
)
from netsynth.partition import build_spike
from netsynth.scalars import rat


def relu_shift_net():
    """Single relu unit computing max(0, x - 1)."""
    b = NetBuilder(1)
    out = b.relu(b.x(0) - 1)
    return b.finish(out)


def affine_net(a, c, d=1):
    b = NetBuilder(d)
    return b.finish(b.x(0) * rat(a) + rat(c))


class TestEvaluation:
    def test_relu_definition(self):
        net = relu_shift_net()
        assert eval_network(net, [rat(2)]) == 1
        assert eval_network(net, [rat(0)]) == 0
        assert eval_network(net, [rat("1/2")]) == 0

    def test_spike_center_value(self):
        net = build_spike(1, (0,), 1)
        assert eval_network(net, [rat(0)]) == 1
        assert eval_network(net, [rat(1)]) == 0

    def test_identity_chain_depth5(self):
        b = NetBuilder(1)
        e = b.x(0)
        for _ in range(5):
            e = b.identity(e)
        net = b.finish(e)
        assert eval_network(net, [rat(3, 7)]) == mpq(3, 7)
        assert count_params(net).L == 5

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            eval_network(relu_shift_net(), [rat(1), rat(2)])

    def test_rational_mode_rejects_sine(self):
        b = NetBuilder(1)
        out = b.periodic(b.x(0), SigmaSpec.sine())
        net = b.finish(out)
        with pytest.raises(UnsupportedPrecision):
            eval_network(net, [rat(1, 4)])
        v = eval_network(net, [rat(1, 4)], BigFloat(128))
        with gmpy2.context(precision=160):
            ref = gmpy2.sqrt(gmpy2.mpfr(2)) / 2
            assert abs(v - ref) < gmpy2.mpfr(2) ** -120

    def test_triangle_exact_in_rational_mode(self):
        b = NetBuilder(1)
        out = b.periodic(b.x(0), SigmaSpec.triangle())
        net = b.finish(out)
        assert eval_network(net, [rat(1, 2)]) == 1
        assert eval_network(net, [rat(3, 2)]) == -1
        assert eval_network(net, [rat(1, 4)]) == mpq(1, 2)
        assert eval_network(net, [rat(9, 4)]) == mpq(1, 2)
        assert eval_network(net, [rat(-1, 4)]) == mpq(-1, 2)

    def test_polynomial_horner_rational(self):
        b = NetBuilder(1)
        out = b.poly(b.x(0), [0, rat(3, 2), 0, rat(-1, 2)])  # (3t - t^3)/2
        net = b.finish(out)
        assert eval_network(net, [rat(1)]) == 1
        assert eval_network(net, [rat(1, 2)]) == mpq(11, 16)

    def test_float64_batch_matches_rational(self):
        net = build_spike(4, (2,), 1)
        xs = [rat(i, 16) for i in range(17)]
        exact = [float(eval_network(net, [x])) for x in xs]
        batch = eval_batch(net, np.array([[float(x)] for x in xs]))[:, 0]
        assert np.allclose(exact, batch, atol=1e-12)


class TestComposition:
    def test_serial_affine(self):
        a = affine_net(2, 0)  # 2x
        bnet = affine_net(1, 1)  # x + 1
        net = compose_serial(a, bnet)
        assert eval_network(net, [rat(1)]) == 3

    def test_serial_spike_then_scale(self):
        a = NetBuilder(1)
        spike = a.inline(build_spike(1, (0,), 1), [a.x(0) * 2 - 1])[0]
        anet = a.finish(spike)  # hat(2x-1)
        bnet = affine_net(3, 0)
        net = compose_serial(anet, bnet)
        assert eval_network(net, [rat(1, 2)]) == 3

    def test_serial_relu_relu(self):
        b1 = NetBuilder(1)
        r1 = b1.finish(b1.relu(b1.x(0)))
        b2 = NetBuilder(1)
        r2 = b2.finish(b2.relu(b2.x(0)))
        net = compose_serial(r1, r2)
        assert eval_network(net, [rat(-1)]) == 0
        assert count_params(net).L == 2

    def test_parallel_cancellation(self):
        idnet = affine_net(1, 0)
        net = compose_parallel([idnet, idnet], [1, -1])
        for v in ["0", "1/3", "-2"]:
            assert eval_network(net, [rat(v)]) == 0

    def test_parallel_two_spikes(self):
        s0 = build_spike(1, (0,), 1)
        s1 = build_spike(1, (1,), 1)
        net = compose_parallel([s0, s1], [2, 3])
        assert eval_network(net, [rat(0)]) == 2
        assert eval_network(net, [rat(1)]) == 3

    def test_parallel_singleton(self):
        s = build_spike(1, (0,), 1)
        net = compose_parallel([s], [5])
        assert eval_network(net, [rat(0)]) == 5

    def test_parallel_width_adds(self):
        s = build_spike(2, (1,), 1)
        w1 = count_params(s).width
        net = compose_parallel([s, s, s], [1, 1, 1])
        assert count_params(net).width == 3 * w1

    def test_arity_mismatch(self):
        with pytest.raises(ArityMismatch):
            compose_parallel([], [])
        with pytest.raises(ArityMismatch):
            compose_serial(relu_shift_net(), build_spike(1, (0, 0), 2))

    def test_composition_matches_math_on_random_points(self):
        import random

        rng = random.Random(7)
        a = build_spike(2, (1,), 1)
        bnet = affine_net(rat(2, 3), rat(-1, 7))
        serial = compose_serial(a, bnet)
        par = compose_parallel([a, bnet], [rat(1, 2), rat(5)])
        for _ in range(1000):
            x = rat(rng.randrange(0, 1000), 1000)
            va = eval_network(a, [x])
            vb_of_a = eval_network(bnet, [va])
            assert eval_network(serial, [x]) == vb_of_a
            vb = eval_network(bnet, [x])
            assert eval_network(par, [x]) == va * rat(1, 2) + 5 * vb


class TestCounting:
    def test_single_relu_unit_counts(self):
        pc = count_params(relu_shift_net())
        assert (pc.W, pc.L, pc.width) == (3, 1, 1)

    def test_affine_only_net_has_no_layers(self):
        pc = count_params(affine_net(2, 1))
        assert pc.L == 0
        assert pc.W == 0


class TestSerialization:
    def test_round_trip_bit_exact(self):
        net = build_spike(3, (2,), 1)
        text = network_to_json(net)
        again = network_to_json(network_from_json(text))
        assert text == again

    def test_round_trip_preserves_values(self):
        net = build_spike(2, (1, 1), 2)
        clone = network_from_json(network_to_json(net))
        for x in [(rat(1, 2), rat(1, 2)), (rat(1, 3), rat(2, 3))]:
            assert eval_network(net, x) == eval_network(clone, x)

    def test_round_trip_bigfloat_weight(self):
        with gmpy2.context(precision=150):
            seed = gmpy2.sqrt(gmpy2.mpfr(2)) / 2
        b = NetBuilder(1)
        e = b.periodic(b.x(0) * rat(0) + _expr_const(seed), SigmaSpec.sine())
        net = b.finish(e)
        clone = network_from_json(network_to_json(net))
        assert clone.units[0].bias == net.units[0].bias
        assert network_to_json(clone) == network_to_json(net)

    def test_round_trip_sigma_table(self):
        spec = SigmaSpec.from_table(
            [(rat(0), rat(0)), (rat(1, 2), rat(1)), (rat(3, 2), rat(-1)), (rat(2), rat(0))]
        )
        b = NetBuilder(1)
        net = b.finish(b.periodic(b.x(0), spec))
        clone = network_from_json(network_to_json(net))
        assert eval_network(clone, [rat(1, 2)]) == 1


def _expr_const(c):
    from netsynth.network import Expr

    return Expr.constant(c)
