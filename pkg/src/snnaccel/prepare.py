"""Model preparation: real-valued networks, batch-norm fusion, and the
quantization pass that turns a fused float network into the integer graph
the engine and simulator execute.

Residual joins force a shared accumulator scale at this stage: the joined
branches are re-quantized at the smaller of their natural scale exponents
(never the larger, so no extra clamping is introduced), and identity
shortcuts get an exact power-of-two lift. After this pass no implicit
rescaling is ever needed at inference time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import InvalidConfig
from .model import (
    BnParams,
    ConvLayerSpec,
    ConvPlan,
    FcSpec,
    NetworkConfig,
    NetworkGraph,
    PoolSpec,
    ResidualBlock,
    _quantize_threshold,
    fuse_bn,
    resnet10_plan,
)
from .quant import (
    QuantParams,
    compute_scale,
    quantize,
    round_half_away_from_zero,
    scale_for_tensor,
)

INPUT_BITS = 8
# Dataset-wide pixel maximum after [0, 1] normalization.
INPUT_MAX = 1.0


@dataclass(frozen=True)
class FloatConvLayer:
    plan: ConvPlan
    weights: np.ndarray  # float64 (out, in/groups, k, k)
    bias: np.ndarray  # float64 (out,)
    bn: Optional[BnParams] = None
    threshold: float = 1.0


@dataclass(frozen=True)
class FloatBlock:
    conv_a: FloatConvLayer
    conv_b: FloatConvLayer
    shortcut: Optional[FloatConvLayer] = None


@dataclass(frozen=True)
class FloatFc:
    weights: np.ndarray  # float64 (classes, features)
    bias: np.ndarray  # float64 (classes,)


@dataclass(frozen=True)
class FloatNetwork:
    config: NetworkConfig
    encoding: FloatConvLayer
    blocks: tuple[FloatBlock, ...]
    fc: FloatFc

    @property
    def fused(self) -> bool:
        return all(layer.bn is None for layer in self.conv_layers())

    def conv_layers(self):
        yield self.encoding
        for block in self.blocks:
            yield block.conv_a
            yield block.conv_b
            if block.shortcut is not None:
                yield block.shortcut


def fuse_network(net: FloatNetwork) -> FloatNetwork:
    """Fold every layer's batch norm into its weights and bias."""

    def fold(layer: FloatConvLayer) -> FloatConvLayer:
        if layer.bn is None:
            return layer
        w, b = fuse_bn(layer.weights, layer.bias, layer.bn)
        return replace(layer, weights=w, bias=b, bn=None)

    return FloatNetwork(
        config=net.config,
        encoding=fold(net.encoding),
        blocks=tuple(
            FloatBlock(
                fold(b.conv_a),
                fold(b.conv_b),
                None if b.shortcut is None else fold(b.shortcut),
            )
            for b in net.blocks
        ),
        fc=net.fc,
    )


def quantize_network(net: FloatNetwork, bits: int | None = None) -> NetworkGraph:
    """Quantize a fused float network into the integer inference graph.

    Weights get per-layer power-of-two scales; biases and thresholds land
    in each layer's accumulator scale with a 32-bit budget. Branches that
    meet at a residual add are forced onto one scale here.
    """
    if not net.fused:
        net = fuse_network(net)
    cfg = net.config
    bits = bits or cfg.weight_bits
    if bits != cfg.weight_bits:
        cfg = replace(cfg, weight_bits=bits)
    input_params = QuantParams(bits=INPUT_BITS, scale_exp=_input_scale_exp())

    def natural_exp(layer: FloatConvLayer) -> int:
        return scale_for_tensor(layer.weights, bits).scale_exp

    def build_conv(layer: FloatConvLayer, forced_exp: int | None, with_threshold: bool) -> ConvLayerSpec:
        p = layer.plan
        wexp = natural_exp(layer) if forced_exp is None else forced_exp
        wq = quantize(layer.weights, QuantParams(bits, wexp))
        in_exp = input_params.scale_exp if p.is_encoding else 0
        acc_exp = wexp + in_exp
        bias_q = round_half_away_from_zero(layer.bias * math.ldexp(1.0, acc_exp))
        theta = _quantize_threshold(layer.threshold, acc_exp) if with_threshold else None
        return ConvLayerSpec(
            name=p.name, in_channels=p.in_channels, out_channels=p.out_channels,
            kernel=p.kernel, stride=p.stride, padding=p.padding, groups=p.groups,
            weights=wq, bias=bias_q.astype(np.int64), acc_exp=acc_exp,
            threshold_q=theta, is_encoding=p.is_encoding, is_residual_1x1=p.is_residual_1x1,
        )

    encoding = build_conv(net.encoding, None, True)

    blocks = []
    for fb in net.blocks:
        if fb.shortcut is None:
            join_exp = natural_exp(fb.conv_b)
            if join_exp < 0:
                raise InvalidConfig(
                    f"{fb.conv_b.plan.name}: weight magnitudes too large for an "
                    "exact identity-shortcut join (needs scale exponent >= 0)"
                )
            conv_b = build_conv(fb.conv_b, join_exp, True)
            shortcut = None
        else:
            join_exp = min(natural_exp(fb.conv_b), natural_exp(fb.shortcut))
            conv_b = build_conv(fb.conv_b, join_exp, True)
            shortcut = build_conv(fb.shortcut, join_exp, False)
        blocks.append(ResidualBlock(build_conv(fb.conv_a, None, True), conv_b, shortcut))

    fc_params = scale_for_tensor(net.fc.weights, bits)
    fc_bias = round_half_away_from_zero(net.fc.bias * math.ldexp(1.0, fc_params.scale_exp))
    plan = resnet10_plan(cfg)
    fc = FcSpec(
        name="fc", in_features=plan.fc_in, out_features=plan.fc_out,
        weights=quantize(net.fc.weights, fc_params),
        bias=fc_bias.astype(np.int64), acc_exp=fc_params.scale_exp,
    )
    return NetworkGraph(
        config=cfg, input_params=input_params, encoding=encoding,
        blocks=tuple(blocks), pool=PoolSpec(channels=plan.pool_channels), fc=fc,
    )


def _input_scale_exp() -> int:
    return compute_scale(INPUT_MAX, INPUT_BITS).scale_exp


def random_float_network(
    cfg: NetworkConfig | None = None,
    seed: int = 0,
    with_bn: bool = True,
) -> FloatNetwork:
    """Seeded random network with weight magnitudes tuned so spikes actually
    propagate (neither silent nor saturated), for testing without training."""
    cfg = cfg or NetworkConfig()
    plan = resnet10_plan(cfg)
    rng = np.random.default_rng(seed)

    def random_conv(p: ConvPlan) -> FloatConvLayer:
        fan_in = (p.in_channels // p.groups) * p.kernel * p.kernel
        if p.is_encoding:
            # Inputs are dense pixels in [0, 1] rather than sparse spikes.
            sigma = 1.8 / math.sqrt(fan_in / 3.0)
        else:
            sigma = 1.8 / math.sqrt(max(fan_in * 0.3, 1.0))
        shape = (p.out_channels, p.in_channels // p.groups, p.kernel, p.kernel)
        weights = rng.normal(0.0, sigma, size=shape)
        bias = rng.normal(0.0, 0.1, size=p.out_channels)
        bn = None
        if with_bn:
            bn = BnParams(
                gamma=rng.uniform(0.8, 1.2, size=p.out_channels),
                beta=rng.normal(0.0, 0.1, size=p.out_channels),
                mean=rng.normal(0.0, 0.2, size=p.out_channels),
                var=rng.uniform(0.5, 1.5, size=p.out_channels),
                eps=1e-5,
            )
        return FloatConvLayer(plan=p, weights=weights, bias=bias, bn=bn,
                              threshold=cfg.threshold)

    blocks = tuple(
        FloatBlock(
            random_conv(bp.conv_a),
            random_conv(bp.conv_b),
            None if bp.shortcut is None else random_conv(bp.shortcut),
        )
        for bp in plan.blocks
    )
    fc = FloatFc(
        weights=rng.normal(0.0, 1.0 / math.sqrt(plan.fc_in), size=(plan.fc_out, plan.fc_in)),
        bias=rng.normal(0.0, 0.1, size=plan.fc_out),
    )
    return FloatNetwork(config=cfg, encoding=random_conv(plan.encoding), blocks=blocks, fc=fc)


def make_random_model(cfg: NetworkConfig | None = None, seed: int = 0) -> NetworkGraph:
    """Random quantized model via the full fuse-plus-quantize pipeline."""
    return quantize_network(fuse_network(random_float_network(cfg, seed)))
