"""Bit-exact integer inference over the quantized, fused network.

This is the behavioral reference the accelerator simulator must match.
All arithmetic past input quantization is exact signed-integer math in
int64 (bounded well inside 32 bits by a build-time check), so results are
identical across platforms, runs, and thread counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ScaleMismatch, ShapeMismatch
from .model import ConvLayerSpec, NetworkGraph, threshold_activate
from .quant import IntTensor, quantize


@dataclass(frozen=True)
class AccMap:
    """Signed accumulator feature map in scale 2^scale_exp = S_w * S_in."""

    values: np.ndarray  # int64, shape (channels, height, width)
    scale_exp: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.int64)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple:
        return self.values.shape


@dataclass(frozen=True)
class PooledSpikes:
    """Per-channel spike totals over the pooled window, kept as exact
    (sum, area) pairs so the pipeline never divides."""

    sums: np.ndarray  # int64, shape (channels,)
    area: int

    @property
    def rates(self) -> np.ndarray:
        return self.sums.astype(np.float64) / self.area


@dataclass(frozen=True)
class InferenceResult:
    label: int
    scores: np.ndarray  # int64, shape (num_classes,)


def pad2d(x, pixels: int):
    """Zero border of the given width on both spatial axes of a (C, H, W)
    array; IntTensor input comes back as IntTensor with the same params."""
    if pixels < 0:
        raise ValueError("padding must be nonnegative")
    if isinstance(x, IntTensor):
        return IntTensor(pad2d(x.values, pixels), x.params)
    arr = np.asarray(x)
    if pixels == 0:
        return arr
    return np.pad(arr, ((0, 0), (pixels, pixels), (pixels, pixels)))


def window_columns(x: np.ndarray, kernel: int, stride: int, padding: int):
    """Padding plus sliding-window processing: one kernel window per output
    position, laid out as (channels, kernel*kernel, positions) columns.

    Values stay integer-valued but are returned as float64 so the matrix
    product can run through BLAS; see exact_int_matmul for why that is
    still bit-exact.
    """
    padded = pad2d(np.asarray(x, dtype=np.int64), padding)
    windows = sliding_window_view(padded, (kernel, kernel), axis=(1, 2))
    windows = windows[:, ::stride, ::stride, :, :]
    c, oh, ow, k, _ = windows.shape
    cols = np.ascontiguousarray(windows.transpose(0, 3, 4, 1, 2))
    return cols.reshape(c, k * k, oh * ow).astype(np.float64), (oh, ow)


# float64 stays exact for integer dot products while every intermediate
# magnitude is below 2^52; the model's 32-bit accumulator bound keeps real
# workloads far inside that.
_EXACT_FLOAT_LIMIT = float(1 << 52)


def exact_int_matmul(weights2d: np.ndarray, cols2d: np.ndarray,
                     product_bound: float) -> np.ndarray:
    """Integer-valued matmul, BLAS-backed when provably exact."""
    if product_bound < _EXACT_FLOAT_LIMIT:
        return (np.asarray(weights2d, np.float64) @ cols2d).astype(np.int64)
    w = np.asarray(weights2d, np.int64)
    return w @ cols2d.astype(np.int64)


def conv2d_grouped(x, layer: ConvLayerSpec) -> AccMap:
    """Strided grouped cross-correlation plus the layer's quantized bias.

    Each group's output channels see only that group's input channels.
    Input is a binary spike map or a quantized integer map shaped
    (in_channels, H, W); output is the accumulator map in the layer scale.
    """
    if isinstance(x, IntTensor):
        x = x.values
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] != layer.in_channels:
        raise ShapeMismatch(
            f"{layer.name}: input shape {x.shape} does not provide "
            f"{layer.in_channels} channels"
        )
    if x.shape[1] + 2 * layer.padding < layer.kernel or x.shape[2] + 2 * layer.padding < layer.kernel:
        raise ShapeMismatch(f"{layer.name}: spatial size {x.shape[1:]} smaller than kernel")

    cols, (oh, ow) = window_columns(x, layer.kernel, layer.stride, layer.padding)
    taps = (layer.in_channels // layer.groups) * layer.kernel * layer.kernel
    x_max = float(np.abs(x).max()) if x.size else 0.0
    w_max = float(2 ** (layer.weights.params.bits - 1))
    bound = taps * x_max * w_max

    w = layer.weights.values
    in_per_group = layer.in_channels // layer.groups
    out_per_group = layer.out_channels // layer.groups
    out = np.empty((layer.out_channels, oh, ow), dtype=np.int64)
    for g in range(layer.groups):
        cols_g = cols[g * in_per_group : (g + 1) * in_per_group].reshape(-1, oh * ow)
        wg = w[g * out_per_group : (g + 1) * out_per_group].reshape(out_per_group, -1)
        out[g * out_per_group : (g + 1) * out_per_group] = exact_int_matmul(
            wg, cols_g, bound).reshape(out_per_group, oh, ow)
    out += layer.bias[:, None, None]
    return AccMap(out, layer.acc_exp)


def residual_add(a: AccMap, b: AccMap) -> AccMap:
    """Elementwise sum of two accumulator maps in the same scale; runs just
    before the block-final threshold."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"residual add joins shapes {a.shape} and {b.shape}")
    if a.scale_exp != b.scale_exp:
        raise ScaleMismatch(
            f"residual add joins scales 2^{a.scale_exp} and 2^{b.scale_exp}; "
            "branches must be exported with a common scale"
        )
    return AccMap(a.values + b.values, a.scale_exp)


def lift_spikes(spikes: np.ndarray, scale_exp: int) -> AccMap:
    """Embed a binary spike map into an accumulator scale: each spike is the
    real value 1, i.e. the integer 2^scale_exp. Exact only for
    nonnegative exponents, which the graph builder guarantees for
    identity-shortcut joins."""
    if scale_exp < 0:
        raise ScaleMismatch(f"cannot lift spikes exactly into scale 2^{scale_exp}")
    return AccMap(np.asarray(spikes, dtype=np.int64) << scale_exp, scale_exp)


def global_avg_pool(spikes: np.ndarray) -> PooledSpikes:
    """Mean spike count per channel, carried exactly as (sum, area)."""
    arr = np.asarray(spikes)
    if arr.ndim != 3:
        raise ShapeMismatch(f"pool expects (C, H, W), got {arr.shape}")
    area = arr.shape[1] * arr.shape[2]
    return PooledSpikes(sums=arr.astype(np.int64).sum(axis=(1, 2)), area=area)


def fully_connected(pooled: PooledSpikes, fc) -> InferenceResult:
    """Classifier scores over spike counts in wide integers.

    The common 1/area factor of the mean is dropped (it cannot change the
    argmax); the bias is multiplied by the area instead so both terms live
    on the same scale. Ties resolve to the lowest class index.
    """
    w = fc.weights.values
    if w.shape[1] != pooled.sums.shape[0]:
        raise ShapeMismatch(
            f"fc expects {w.shape[1]} pooled channels, got {pooled.sums.shape[0]}"
        )
    scores = w @ pooled.sums + pooled.area * fc.bias
    return InferenceResult(label=int(np.argmax(scores)), scores=scores)


def quantize_input(image: np.ndarray, model: NetworkGraph) -> IntTensor:
    """Map raw pixels to the encoding conv's integer domain. uint8 input is
    normalized to [0, 1] first; float input must already be in [0, 1]."""
    arr = np.asarray(image)
    expected = (model.config.in_channels, model.config.input_hw, model.config.input_hw)
    if arr.shape != expected:
        raise ShapeMismatch(f"image shape {arr.shape} != expected {expected}")
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    return quantize(arr, model.input_params)


def infer(image: np.ndarray, model: NetworkGraph) -> InferenceResult:
    """Classify one image: quantize, encode to spikes, run the residual
    blocks, pool, and take the FC argmax. Pure function of its inputs."""
    return _run(image, model)[0]


def infer_trace(image: np.ndarray, model: NetworkGraph):
    """infer plus every intermediate spike/accumulator map, keyed by layer
    name; used by tests and by simulator cross-checks."""
    return _run(image, model)


def _run(image: np.ndarray, model: NetworkGraph):
    trace: dict[str, object] = {}
    q_in = quantize_input(image, model)
    trace["input_q"] = q_in

    acc = conv2d_grouped(q_in, model.encoding)
    spikes = threshold_activate(acc.values, model.encoding.threshold_q)
    trace[model.encoding.name] = acc
    trace[model.encoding.name + ".spikes"] = spikes

    for block in model.blocks:
        acc_a = conv2d_grouped(spikes, block.conv_a)
        spikes_a = threshold_activate(acc_a.values, block.conv_a.threshold_q)
        acc_b = conv2d_grouped(spikes_a, block.conv_b)
        if block.shortcut is None:
            shortcut = lift_spikes(spikes, acc_b.scale_exp)
        else:
            shortcut = conv2d_grouped(spikes, block.shortcut)
            trace[block.shortcut.name] = shortcut
        joined = residual_add(acc_b, shortcut)
        spikes = threshold_activate(joined.values, block.conv_b.threshold_q)
        trace[block.conv_a.name] = acc_a
        trace[block.conv_a.name + ".spikes"] = spikes_a
        trace[block.conv_b.name] = joined
        trace[block.conv_b.name + ".spikes"] = spikes

    pooled = global_avg_pool(spikes)
    result = fully_connected(pooled, model.fc)
    trace["pool"] = pooled
    return result, trace
