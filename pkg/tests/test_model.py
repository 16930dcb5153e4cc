"""Neuron dynamics, BN fusion, parameter math, and graph construction."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from snnaccel.errors import IndivisibleGroups, InvalidConfig
from snnaccel.model import (
    BnParams,
    LifParams,
    NetworkConfig,
    bn_forward,
    build_resnet10,
    conv_param_count,
    count_params,
    fuse_bn,
    layer_param_counts,
    lif_step,
    threshold_activate,
)


class TestLifStep:
    def test_zero_input_zero_state(self):
        u, s = lif_step(0.0, 0.0, LifParams())
        assert (u, s) == (0.0, 0)

    def test_suprathreshold_single_step(self):
        # resistance * current * (dt/tau) beyond threshold fires and resets
        p = LifParams(tau=1.0, resistance=1.0, threshold=1.0, dt=1.0)
        u, s = lif_step(0.0, 5.0, p)
        assert s == 1
        assert u == 0.0

    def test_full_leak_from_threshold(self):
        # dt == tau: the previous potential leaks away entirely
        p = LifParams(tau=2.0, resistance=1.0, threshold=1.0, dt=2.0)
        u, s = lif_step(1.0, 0.0, p)
        assert (u, s) == (0.0, 0)

    def test_subtract_reset(self):
        p = LifParams(threshold=1.0, reset_mode="subtract")
        u, s = lif_step(0.0, 1.5, p)
        assert s == 1
        assert u == pytest.approx(0.5)

    def test_partial_leak(self):
        p = LifParams(tau=4.0, dt=1.0, threshold=10.0)
        u, s = lif_step(2.0, 0.0, p)
        assert s == 0
        assert u == pytest.approx(2.0 * 0.75)

    def test_multi_step_integration_reaches_threshold(self):
        p = LifParams(tau=10.0, dt=1.0, threshold=1.0)
        u, fired = 0.0, []
        for _ in range(40):
            u, s = lif_step(u, 1.5, p)
            fired.append(s)
        assert sum(fired) > 0

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            LifParams(tau=0.0)
        with pytest.raises(ValueError):
            LifParams(dt=2.0, tau=1.0)
        with pytest.raises(ValueError):
            LifParams(reset_mode="clip")

    @given(st.floats(-100, 100), st.floats(-100, 100))
    def test_reduces_to_threshold_compare(self, u0_unused, current):
        # dt/tau = 1, reset to zero, zero state: exactly the T=1 path
        p = LifParams(tau=1.0, dt=1.0, resistance=1.0, threshold=1.0)
        _, spike = lif_step(0.0, current, p)
        assert spike == int(threshold_activate(np.array([[[current]]]), p.threshold)[0, 0, 0])


class TestThresholdActivate:
    def test_strictly_above(self):
        assert threshold_activate(np.array([5]), 4).tolist() == [1]

    def test_boundary_not_spiking(self):
        assert threshold_activate(np.array([4]), 4).tolist() == [0]

    def test_sign_map_against_zero(self, rng):
        acc = rng.integers(-50, 50, size=(4, 6, 6))
        spikes = threshold_activate(acc, 0)
        assert np.array_equal(spikes, (acc > 0).astype(np.uint8))

    def test_monotone_in_accumulator(self, rng):
        acc = rng.integers(-50, 50, size=(3, 5, 5))
        spikes = threshold_activate(acc, 3)
        bumped = threshold_activate(acc + rng.integers(0, 10, acc.shape), 3)
        # raising accumulator values never turns a 1 into a 0
        assert np.all(bumped >= spikes)

    def test_output_binary(self, rng):
        acc = rng.integers(-1000, 1000, size=(8, 4, 4))
        spikes = threshold_activate(acc, 17)
        assert set(np.unique(spikes)) <= {0, 1}


class TestBatchNorm:
    def test_identity_normalization(self):
        eps = 1e-5
        p = BnParams(gamma=1.0, beta=0.0, mean=0.0, var=1.0 - eps, eps=eps)
        y = np.linspace(-2, 2, 9)
        assert np.allclose(bn_forward(y, p), y)

    def test_centered_input_returns_beta(self):
        p = BnParams(gamma=3.0, beta=0.7, mean=1.5, var=2.0)
        assert bn_forward(np.array([1.5]), p)[0] == pytest.approx(0.7)

    def test_hand_evaluated(self):
        # gamma=2, beta=1, mean=0.5, var=0.25, eps -> 0: 2*(0.5)/0.5 + 1 = 3
        p = BnParams(gamma=2.0, beta=1.0, mean=0.5, var=0.25, eps=1e-12)
        assert bn_forward(np.array([1.0]), p)[0] == pytest.approx(3.0, abs=1e-9)

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            BnParams(gamma=1.0, beta=0.0, mean=0.0, var=-1.0)
        with pytest.raises(ValueError):
            BnParams(gamma=1.0, beta=0.0, mean=0.0, var=1.0, eps=0.0)


class TestFuseBn:
    def test_identity_bn(self):
        p = BnParams(gamma=1.0, beta=0.0, mean=0.0, var=1.0 - 1e-5, eps=1e-5)
        c, d = fuse_bn(np.array([2.0]), np.array([0.5]), p)
        assert c[0] == pytest.approx(2.0)
        assert d[0] == pytest.approx(0.5)

    def test_constant_branch(self):
        p = BnParams(gamma=1.3, beta=0.9, mean=0.4, var=0.8)
        c, d = fuse_bn(np.array([0.0]), np.array([0.4]), p)
        assert c[0] == 0.0
        assert d[0] == pytest.approx(0.9)

    def test_equivalence_scalar(self, rng):
        for _ in range(50):
            p = BnParams(gamma=rng.normal(), beta=rng.normal(),
                         mean=rng.normal(), var=abs(rng.normal()) + 0.1)
            w, b = rng.normal(size=2)
            c, d = fuse_bn(np.array([w]), np.array([b]), p)
            for x in rng.normal(size=5):
                direct = bn_forward(np.array([w * x + b]), p)[0]
                fused = c[0] * x + d[0]
                assert abs(direct - fused) <= 1e-10 * max(1.0, abs(direct))

    def test_equivalence_per_channel_conv_weights(self, rng):
        out_ch = 6
        w = rng.normal(size=(out_ch, 3, 3, 3))
        b = rng.normal(size=out_ch)
        p = BnParams(
            gamma=rng.uniform(0.5, 1.5, out_ch), beta=rng.normal(size=out_ch),
            mean=rng.normal(size=out_ch), var=rng.uniform(0.2, 2.0, out_ch),
        )
        c, d = fuse_bn(w, b, p)
        for _ in range(20):
            patch = rng.normal(size=(3, 3, 3))
            pre = w.reshape(out_ch, -1) @ patch.ravel() + b
            direct = bn_forward(pre, p)
            fused = c.reshape(out_ch, -1) @ patch.ravel() + d
            assert np.all(np.abs(direct - fused) <= 1e-10 * np.maximum(1.0, np.abs(direct)))


class TestConvParamCount:
    def test_standard_conv(self):
        assert conv_param_count(128, 128, 1, 3) == 147456

    def test_grouped_conv(self):
        assert conv_param_count(128, 128, 4, 3) == 36864
        assert conv_param_count(128, 128, 4, 3) * 4 == conv_param_count(128, 128, 1, 3)

    def test_depthwise_degenerate(self):
        for c in (4, 16, 64):
            assert conv_param_count(c, c, c, 1) == c

    def test_indivisible_groups(self):
        with pytest.raises(IndivisibleGroups):
            conv_param_count(10, 16, 4, 3)

    @given(
        st.integers(1, 8), st.integers(1, 8), st.integers(1, 4),
        st.sampled_from([1, 3, 5]),
    )
    def test_group_scaling(self, in_mult, out_mult, g, k):
        cin, cout = in_mult * g, out_mult * g
        assert conv_param_count(cin, cout, g, k) * g == conv_param_count(cin, cout, 1, k)


class TestBuildResnet10:
    def test_ten_trainable_layers(self):
        g = build_resnet10()
        assert len(g.trainable_layers()) == 10

    def test_total_weight_count_near_paper(self):
        g = build_resnet10()
        total = count_params(g)
        assert total == 702336  # canonical repo count
        assert abs(total - 0.69e6) / 0.69e6 < 0.05

    def test_grouped_layers_quarter_of_standard(self):
        g4 = layer_param_counts(build_resnet10(NetworkConfig(groups=4)))
        g1 = layer_param_counts(build_resnet10(NetworkConfig(groups=1)))
        grouped_names = [n for n in g4 if n.startswith(("conv2", "conv3")) and not n.endswith("s")]
        assert grouped_names
        for name in grouped_names:
            assert g1[name] == 4 * g4[name]

    def test_residual_edges(self):
        g = build_resnet10()
        edges = g.residual_edges()
        assert edges == [
            ("conv1", "conv2_1b"),
            ("conv2_1b", "conv2_2b"),
            ("conv3_1s", "conv3_1b"),
            ("conv3_1b", "conv3_2b"),
        ]

    def test_count_params_with_bias(self):
        g = build_resnet10()
        biases = sum(l.out_channels for l in g.conv_layers()) + g.fc.out_features
        assert count_params(g, include_bias=True) == count_params(g) + biases

    def test_invalid_group_plan(self):
        with pytest.raises(InvalidConfig):
            NetworkConfig(base_channels=10, groups=4)

    def test_shortcut_not_grouped_and_not_trainable_layer(self):
        g = build_resnet10()
        sc = g.layer_by_name("conv3_1s")
        assert sc.groups == 1
        assert sc.is_residual_1x1
        assert "conv3_1s" not in g.trainable_layers()

    def test_small_plan_consistency(self, small_model):
        assert len(small_model.trainable_layers()) == 10
        assert small_model.pool.channels == 2 * small_model.config.base_channels


class TestAccumulatorBound:
    def test_huge_bias_trips_build_check(self, small_config):
        # a layer whose worst-case accumulator would overflow 32 bits is
        # rejected when the graph is assembled
        from snnaccel.model import BIAS_MAX, ConvLayerSpec
        from snnaccel.quant import IntTensor, QuantParams

        w = np.ones((8, 4, 3, 3), dtype=np.int64)
        layer = ConvLayerSpec(
            name="hot", in_channels=8, out_channels=8, kernel=3, stride=1,
            padding=1, groups=2,
            weights=IntTensor(w, QuantParams(8, 0)),
            bias=np.full(8, BIAS_MAX, dtype=np.int64), acc_exp=0, threshold_q=0,
        )
        model = build_resnet10(small_config)
        from dataclasses import replace as dreplace

        from snnaccel.model import NetworkGraph, ResidualBlock

        bad_block = ResidualBlock(conv_a=layer, conv_b=model.blocks[0].conv_b,
                                  shortcut=None)
        with pytest.raises(InvalidConfig):
            NetworkGraph(
                config=model.config, input_params=model.input_params,
                encoding=model.encoding,
                blocks=(bad_block,) + model.blocks[1:],
                pool=model.pool, fc=model.fc,
            )

    def test_bias_32bit_budget_enforced(self):
        from snnaccel.errors import InvalidConfig as IC
        from snnaccel.model import ConvLayerSpec
        from snnaccel.quant import IntTensor, QuantParams

        with pytest.raises(IC):
            ConvLayerSpec(
                name="x", in_channels=2, out_channels=2, kernel=1, stride=1,
                padding=0, groups=1,
                weights=IntTensor(np.zeros((2, 2, 1, 1), np.int64), QuantParams(8, 0)),
                bias=np.array([1 << 31, 0], dtype=np.int64), acc_exp=0, threshold_q=0,
            )
