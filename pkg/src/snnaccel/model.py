"""Neuron dynamics, batch-norm fusion, grouped-conv parameter math, and the
quantized residual network graph.

The network is a 10-trainable-layer residual net: an encoding convolution
that turns 8-bit pixels into spikes, four residual blocks of grouped 3x3
convolutions with threshold activations, a global average pool, and a
10-way fully connected classifier. Shortcut 1x1 convolutions are standard
(ungrouped) and are not counted among the 10 trainable layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .errors import IndivisibleGroups, InvalidConfig
from .quant import IntTensor, QuantParams, round_half_away_from_zero

# Biases and thresholds live in the convolution accumulator scale and get a
# 32-bit signed budget; 8-bit would truncate fused biases.
BIAS_BITS = 32
BIAS_MIN = -(1 << (BIAS_BITS - 1))
BIAS_MAX = (1 << (BIAS_BITS - 1)) - 1

RESET_TO_ZERO = "to-zero"
RESET_SUBTRACT = "subtract"


# ---------------------------------------------------------------------------
# Neuron dynamics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LifParams:
    """Leaky integrate-and-fire neuron constants.

    dt <= tau keeps the explicit Euler update of the membrane equation
    stable; dt == tau collapses the neuron to a stateless threshold
    comparison, which is the single-timestep hardware path.
    """

    tau: float = 1.0
    resistance: float = 1.0
    threshold: float = 1.0
    dt: float = 1.0
    reset_mode: str = RESET_TO_ZERO

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.dt > self.tau:
            raise ValueError("dt must not exceed tau (explicit update stability)")
        if self.reset_mode not in (RESET_TO_ZERO, RESET_SUBTRACT):
            raise ValueError(f"unknown reset mode {self.reset_mode!r}")


def lif_step(membrane, current, params: LifParams):
    """One discretized membrane update followed by the firing rule.

    Returns (next membrane potential, spike) where spike is 1 when the
    pre-reset potential strictly exceeds the threshold. Works on scalars
    or numpy arrays.
    """
    u = np.asarray(membrane, dtype=np.float64)
    i_in = np.asarray(current, dtype=np.float64)
    leak = params.dt / params.tau
    u_pre = u + leak * (-u + params.resistance * i_in)
    spike = (u_pre > params.threshold).astype(np.uint8)
    if params.reset_mode == RESET_TO_ZERO:
        u_next = np.where(spike == 1, 0.0, u_pre)
    else:
        u_next = np.where(spike == 1, u_pre - params.threshold, u_pre)
    if np.isscalar(membrane) and np.isscalar(current):
        return float(u_next), int(spike)
    return u_next, spike


def threshold_activate(acc, threshold_q) -> np.ndarray:
    """Single-timestep activation: spike where the accumulator strictly
    exceeds the threshold. No membrane state is kept."""
    return (np.asarray(acc) > threshold_q).astype(np.uint8)


# ---------------------------------------------------------------------------
# Batch-norm fusion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BnParams:
    """Batch-norm statistics and affine parameters, scalar or per-channel."""

    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        for name in ("gamma", "beta", "mean", "var"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.var < 0):
            raise ValueError("variance must be nonnegative")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


def bn_forward(y: np.ndarray, p: BnParams) -> np.ndarray:
    """Normalize-then-affine: gamma * (y - mean) / sqrt(var + eps) + beta."""
    return p.gamma * (np.asarray(y, dtype=np.float64) - p.mean) / np.sqrt(p.var + p.eps) + p.beta


def fuse_bn(weights: np.ndarray, bias: np.ndarray, p: BnParams):
    """Fold batch norm into the preceding affine layer.

    Returns (fused weights, fused bias) such that fused(x) == bn(w x + b)
    exactly in real arithmetic. Per-channel BN params apply along the
    leading (output channel) axis of a 4-d weight tensor.
    """
    w = np.asarray(weights, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64)
    factor = p.gamma / np.sqrt(p.var + p.eps)
    if w.ndim > 1 and np.ndim(factor) == 1:
        w_fused = w * factor.reshape((-1,) + (1,) * (w.ndim - 1))
    else:
        w_fused = w * factor
    b_fused = (b - p.mean) * factor + p.beta
    return w_fused, b_fused


# ---------------------------------------------------------------------------
# Grouped convolution parameter math
# ---------------------------------------------------------------------------

def conv_param_count(in_channels: int, out_channels: int, groups: int, kernel: int) -> int:
    """Weight count of a grouped convolution:
    (in/g) * (out/g) * g * k^2, which is the standard count divided by g."""
    if in_channels % groups or out_channels % groups:
        raise IndivisibleGroups(
            f"groups={groups} must divide in_channels={in_channels} "
            f"and out_channels={out_channels}"
        )
    return (in_channels // groups) * (out_channels // groups) * groups * kernel * kernel


# ---------------------------------------------------------------------------
# Quantized network graph
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvLayerSpec:
    """One fused, quantized convolution layer.

    Weights are signed ``bits``-wide integers with a power-of-two scale;
    bias and threshold are integers in the accumulator scale
    2^acc_exp = S_w * S_in. threshold_q is None for layers whose output
    feeds a residual add (the block-final threshold lives on the second
    conv of the block) or that have no activation (shortcuts).
    """

    name: str
    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    padding: int
    groups: int
    weights: IntTensor
    bias: np.ndarray
    acc_exp: int
    threshold_q: Optional[int] = None
    is_encoding: bool = False
    is_residual_1x1: bool = False

    def __post_init__(self):
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise IndivisibleGroups(
                f"{self.name}: groups={self.groups} must divide channel counts "
                f"({self.in_channels}, {self.out_channels})"
            )
        expected = (self.out_channels, self.in_channels // self.groups, self.kernel, self.kernel)
        if self.weights.shape != expected:
            raise InvalidConfig(
                f"{self.name}: weight shape {self.weights.shape} != expected {expected}"
            )
        bias = np.asarray(self.bias, dtype=np.int64)
        bias.setflags(write=False)
        object.__setattr__(self, "bias", bias)
        if bias.shape != (self.out_channels,):
            raise InvalidConfig(f"{self.name}: bias shape {bias.shape} != ({self.out_channels},)")
        if bias.size and (bias.min() < BIAS_MIN or bias.max() > BIAS_MAX):
            raise InvalidConfig(f"{self.name}: bias exceeds the {BIAS_BITS}-bit budget")

    @property
    def weight_count(self) -> int:
        return conv_param_count(self.in_channels, self.out_channels, self.groups, self.kernel)

    def out_hw(self, in_hw: tuple[int, int]) -> tuple[int, int]:
        h, w = in_hw
        oh = (h + 2 * self.padding - self.kernel) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel) // self.stride + 1
        return oh, ow


@dataclass(frozen=True)
class ResidualBlock:
    """Two grouped convolutions plus a shortcut that joins before the
    block-final threshold. shortcut is None for an identity shortcut;
    conv_b.threshold_q is the block-final threshold in the join scale."""

    conv_a: ConvLayerSpec
    conv_b: ConvLayerSpec
    shortcut: Optional[ConvLayerSpec] = None

    def __post_init__(self):
        if self.conv_a.threshold_q is None or self.conv_b.threshold_q is None:
            raise InvalidConfig(f"block {self.conv_a.name}: main-path thresholds required")
        if self.shortcut is None:
            # Identity spikes are lifted into the join scale by an exact
            # left shift, so the join exponent must be nonnegative.
            if self.conv_b.acc_exp < 0:
                raise InvalidConfig(
                    f"block {self.conv_a.name}: identity shortcut needs acc_exp >= 0"
                )
            if self.conv_a.in_channels != self.conv_b.out_channels or self.conv_a.stride != 1:
                raise InvalidConfig(
                    f"block {self.conv_a.name}: identity shortcut requires matching shapes"
                )
        else:
            if self.shortcut.acc_exp != self.conv_b.acc_exp:
                raise InvalidConfig(
                    f"block {self.conv_a.name}: shortcut scale 2^{self.shortcut.acc_exp} "
                    f"!= join scale 2^{self.conv_b.acc_exp}"
                )
            if self.shortcut.out_channels != self.conv_b.out_channels:
                raise InvalidConfig(f"block {self.conv_a.name}: shortcut channel mismatch")


@dataclass(frozen=True)
class PoolSpec:
    """Global average pool compressing each feature map to one value."""

    channels: int
    kind: str = "avg"


@dataclass(frozen=True)
class FcSpec:
    """Fully connected classifier over pooled spike counts."""

    name: str
    in_features: int
    out_features: int
    weights: IntTensor
    bias: np.ndarray
    acc_exp: int

    def __post_init__(self):
        if self.weights.shape != (self.out_features, self.in_features):
            raise InvalidConfig(
                f"{self.name}: weight shape {self.weights.shape} != "
                f"({self.out_features}, {self.in_features})"
            )
        bias = np.asarray(self.bias, dtype=np.int64)
        bias.setflags(write=False)
        object.__setattr__(self, "bias", bias)
        if bias.shape != (self.out_features,):
            raise InvalidConfig(f"{self.name}: bias shape mismatch")

    @property
    def weight_count(self) -> int:
        return self.in_features * self.out_features


@dataclass(frozen=True)
class NetworkConfig:
    """Structural knobs for the residual network builder."""

    in_channels: int = 3
    base_channels: int = 128
    groups: int = 4
    weight_bits: int = 8
    num_classes: int = 10
    input_hw: int = 32
    threshold: float = 1.0

    def __post_init__(self):
        if self.base_channels <= 0 or self.in_channels <= 0:
            raise InvalidConfig("channel counts must be positive")
        if self.base_channels % self.groups or (2 * self.base_channels) % self.groups:
            raise InvalidConfig(
                f"groups={self.groups} must divide the channel plan "
                f"({self.base_channels}, {2 * self.base_channels})"
            )
        if not 2 <= self.weight_bits <= 16:
            raise InvalidConfig("weight bits must be in [2, 16]")
        if self.input_hw < 4 or self.input_hw % 4:
            raise InvalidConfig("input size must be a multiple of 4 and at least 4")


@dataclass(frozen=True)
class NetworkGraph:
    """The full quantized network: encoding conv, residual blocks, pool, FC.

    input_params describe how raw pixels are quantized before the encoding
    convolution. Immutable after construction; safe to share across
    concurrent inference workers.
    """

    config: NetworkConfig
    input_params: QuantParams
    encoding: ConvLayerSpec
    blocks: tuple[ResidualBlock, ...]
    pool: PoolSpec
    fc: FcSpec

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        _check_graph(self)

    def conv_layers(self) -> Iterator[ConvLayerSpec]:
        """All convolutions in execution order, shortcuts included."""
        yield self.encoding
        for block in self.blocks:
            yield block.conv_a
            yield block.conv_b
            if block.shortcut is not None:
                yield block.shortcut

    def trainable_layers(self) -> list[str]:
        """Names of the trainable-weight layers; shortcuts excluded."""
        names = [self.encoding.name]
        for block in self.blocks:
            names.extend([block.conv_a.name, block.conv_b.name])
        names.append(self.fc.name)
        return names

    def residual_edges(self) -> list[tuple[str, str]]:
        """(source, add point) pairs; source is the block input producer."""
        edges = []
        prev = self.encoding.name
        for block in self.blocks:
            source = prev if block.shortcut is None else block.shortcut.name
            edges.append((source, block.conv_b.name))
            prev = block.conv_b.name
        return edges

    def layer_by_name(self, name: str) -> ConvLayerSpec:
        for layer in self.conv_layers():
            if layer.name == name:
                return layer
        raise KeyError(name)


def _check_graph(g: NetworkGraph) -> None:
    cfg = g.config
    if len(g.trainable_layers()) != 10:
        raise InvalidConfig(
            f"default topology must have 10 trainable-weight layers, "
            f"got {len(g.trainable_layers())}"
        )
    # Residual adds must join equal shapes: walk spatial sizes through the net.
    hw = (cfg.input_hw, cfg.input_hw)
    hw = g.encoding.out_hw(hw)
    channels = g.encoding.out_channels
    for block in g.blocks:
        in_hw, in_ch = hw, channels
        mid_hw = block.conv_a.out_hw(in_hw)
        out_hw = block.conv_b.out_hw(mid_hw)
        if block.shortcut is None:
            sc_hw, sc_ch = in_hw, in_ch
        else:
            sc_hw = block.shortcut.out_hw(in_hw)
            sc_ch = block.shortcut.out_channels
        if sc_hw != out_hw or sc_ch != block.conv_b.out_channels:
            raise InvalidConfig(
                f"block {block.conv_a.name}: residual add joins "
                f"{(sc_ch,) + sc_hw} with {(block.conv_b.out_channels,) + out_hw}"
            )
        hw, channels = out_hw, block.conv_b.out_channels
    if channels != g.pool.channels:
        raise InvalidConfig("pool channel count does not match the feature extractor")
    if g.fc.in_features != g.pool.channels:
        raise InvalidConfig("FC input width does not match the pool output")
    _check_accumulator_bounds(g, hw)


def _check_accumulator_bounds(g: NetworkGraph, final_hw: tuple[int, int]) -> None:
    """Worst-case accumulator magnitudes must fit signed 32-bit integers."""
    limit = 1 << 31
    for layer in g.conv_layers():
        taps = (layer.in_channels // layer.groups) * layer.kernel * layer.kernel
        w_max = int(np.max(np.abs(layer.weights.values))) if layer.weights.values.size else 0
        x_max = 127 if layer.is_encoding else 1
        bias_max = int(np.max(np.abs(layer.bias))) if layer.bias.size else 0
        bound = taps * w_max * x_max + bias_max
        if bound >= limit:
            raise InvalidConfig(
                f"{layer.name}: worst-case accumulator {bound} exceeds the 32-bit budget"
            )
    area = final_hw[0] * final_hw[1]
    fc_w_max = int(np.max(np.abs(g.fc.weights.values))) if g.fc.weights.values.size else 0
    fc_b_max = int(np.max(np.abs(g.fc.bias))) if g.fc.bias.size else 0
    fc_bound = g.fc.in_features * area * fc_w_max + area * fc_b_max
    if fc_bound >= limit:
        raise InvalidConfig(f"fc: worst-case accumulator {fc_bound} exceeds the 32-bit budget")


# ---------------------------------------------------------------------------
# Topology plan and builder
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvPlan:
    """Structural description of one convolution before weights exist."""

    name: str
    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    padding: int
    groups: int
    is_encoding: bool = False
    is_residual_1x1: bool = False


@dataclass(frozen=True)
class BlockPlan:
    conv_a: ConvPlan
    conv_b: ConvPlan
    shortcut: Optional[ConvPlan] = None


@dataclass(frozen=True)
class NetworkPlan:
    config: NetworkConfig
    encoding: ConvPlan
    blocks: tuple[BlockPlan, ...]
    pool_channels: int
    fc_in: int
    fc_out: int

    def conv_plans(self) -> Iterator[ConvPlan]:
        yield self.encoding
        for block in self.blocks:
            yield block.conv_a
            yield block.conv_b
            if block.shortcut is not None:
                yield block.shortcut


def resnet10_plan(cfg: NetworkConfig) -> NetworkPlan:
    """Layer plan: encoding conv, two residual stages of two blocks each
    (the second stage doubles channels and downsamples with a 1x1 shortcut),
    global pool, and the classifier."""
    c1 = cfg.base_channels
    c2 = 2 * cfg.base_channels
    g = cfg.groups
    encoding = ConvPlan("conv1", cfg.in_channels, c1, 3, 1, 1, 1, is_encoding=True)
    blocks = [
        BlockPlan(
            ConvPlan("conv2_1a", c1, c1, 3, 1, 1, g),
            ConvPlan("conv2_1b", c1, c1, 3, 1, 1, g),
        ),
        BlockPlan(
            ConvPlan("conv2_2a", c1, c1, 3, 1, 1, g),
            ConvPlan("conv2_2b", c1, c1, 3, 1, 1, g),
        ),
        BlockPlan(
            ConvPlan("conv3_1a", c1, c2, 3, 2, 1, g),
            ConvPlan("conv3_1b", c2, c2, 3, 1, 1, g),
            ConvPlan("conv3_1s", c1, c2, 1, 2, 0, 1, is_residual_1x1=True),
        ),
        BlockPlan(
            ConvPlan("conv3_2a", c2, c2, 3, 1, 1, g),
            ConvPlan("conv3_2b", c2, c2, 3, 1, 1, g),
        ),
    ]
    return NetworkPlan(cfg, encoding, tuple(blocks), c2, c2, cfg.num_classes)


def build_resnet10(cfg: NetworkConfig | None = None) -> NetworkGraph:
    """Construct the default graph with placeholder (all-zero) weights.

    Structure, scales, and parameter counts are exactly those of a real
    model; use the preparation pipeline to fill in trained or random
    weights. Raises InvalidConfig for inconsistent channel/group plans.
    """
    cfg = cfg or NetworkConfig()
    plan = resnet10_plan(cfg)
    wexp = cfg.weight_bits - 1  # degenerate-range substitute scale
    input_params = QuantParams(bits=8, scale_exp=7)  # pixel range [0, 1]

    def zero_conv(p: ConvPlan, with_threshold: bool) -> ConvLayerSpec:
        in_exp = input_params.scale_exp if p.is_encoding else 0
        acc_exp = wexp + in_exp
        wq = IntTensor(
            np.zeros((p.out_channels, p.in_channels // p.groups, p.kernel, p.kernel), np.int64),
            QuantParams(cfg.weight_bits, wexp),
        )
        theta = _quantize_threshold(cfg.threshold, acc_exp) if with_threshold else None
        return ConvLayerSpec(
            name=p.name, in_channels=p.in_channels, out_channels=p.out_channels,
            kernel=p.kernel, stride=p.stride, padding=p.padding, groups=p.groups,
            weights=wq, bias=np.zeros(p.out_channels, np.int64), acc_exp=acc_exp,
            threshold_q=theta, is_encoding=p.is_encoding, is_residual_1x1=p.is_residual_1x1,
        )

    blocks = tuple(
        ResidualBlock(
            conv_a=zero_conv(bp.conv_a, True),
            conv_b=zero_conv(bp.conv_b, True),
            shortcut=None if bp.shortcut is None else zero_conv(bp.shortcut, False),
        )
        for bp in plan.blocks
    )
    fc = FcSpec(
        name="fc", in_features=plan.fc_in, out_features=plan.fc_out,
        weights=IntTensor(np.zeros((plan.fc_out, plan.fc_in), np.int64),
                          QuantParams(cfg.weight_bits, wexp)),
        bias=np.zeros(plan.fc_out, np.int64), acc_exp=wexp,
    )
    return NetworkGraph(
        config=cfg, input_params=input_params, encoding=zero_conv(plan.encoding, True),
        blocks=blocks, pool=PoolSpec(channels=plan.pool_channels), fc=fc,
    )


def _quantize_threshold(threshold: float, acc_exp: int) -> int:
    """Map a real threshold into the accumulator scale."""
    return int(round_half_away_from_zero(np.asarray(math.ldexp(threshold, acc_exp))))


def count_params(graph: NetworkGraph, include_bias: bool = False) -> int:
    """Total weight count across all conv layers (shortcuts included) plus
    the FC weights; biases only when include_bias is set."""
    total = 0
    for layer in graph.conv_layers():
        total += layer.weight_count
        if include_bias:
            total += layer.out_channels
    total += graph.fc.weight_count
    if include_bias:
        total += graph.fc.out_features
    return total


def layer_param_counts(graph: NetworkGraph) -> dict[str, int]:
    """Per-layer weight counts in execution order, FC included."""
    counts = {layer.name: layer.weight_count for layer in graph.conv_layers()}
    counts[graph.fc.name] = graph.fc.weight_count
    return counts
