"""Durable formats: model files, PE-array-ordered weight packing, and the
CIFAR-10 binary batch parser.

Model file layout (little-endian throughout):

    bytes 0..7    magic  b"SNNMODEL"
    bytes 8..11   format version (u32)
    bytes 12..15  manifest length in bytes (u32)
    manifest      UTF-8 JSON: topology, per-layer quantization params,
                  thresholds, and blob offsets/lengths
    blobs         concatenated raw tensors; weights are signed bytes in
                  logical (out, in/group, ky, kx) row-major order, biases
                  are signed 32-bit words, float models use 64-bit floats

The manifest stays human-readable (pipe the file through `tail -c +17`
and a JSON formatter) while the blobs stay bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import BadLabel, CorruptFile
from .model import (
    ConvLayerSpec,
    ConvPlan,
    FcSpec,
    NetworkConfig,
    NetworkGraph,
    PoolSpec,
    ResidualBlock,
    BnParams,
)
from .prepare import FloatBlock, FloatConvLayer, FloatFc, FloatNetwork, resnet10_plan
from .quant import IntTensor, QuantParams
from .sim import PeArrayGeometry, pack_weight_bytes, tile_layer, unpack_weight_bytes

MAGIC = b"SNNMODEL"
FORMAT_VERSION = 1

AnyModel = Union[NetworkGraph, FloatNetwork]


# ---------------------------------------------------------------------------
# Model serialization
# ---------------------------------------------------------------------------

def save_model(model: AnyModel) -> bytes:
    """Serialize a quantized graph or a float network; load_model inverts
    this byte-for-byte."""
    if isinstance(model, NetworkGraph):
        manifest, blobs = _encode_quantized(model)
    elif isinstance(model, FloatNetwork):
        manifest, blobs = _encode_float(model)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    manifest_bytes = json.dumps(manifest, indent=1, sort_keys=True).encode("utf-8")
    header = MAGIC + struct.pack("<II", FORMAT_VERSION, len(manifest_bytes))
    return header + manifest_bytes + blobs


def load_model(data: bytes) -> AnyModel:
    """Parse bytes produced by save_model; raises CorruptFile on any
    structural problem (magic, version, lengths, manifest syntax)."""
    if len(data) < 16:
        raise CorruptFile(f"file too short ({len(data)} bytes)")
    if data[:8] != MAGIC:
        raise CorruptFile(f"bad magic {data[:8]!r}")
    version, manifest_len = struct.unpack("<II", data[8:16])
    if version != FORMAT_VERSION:
        raise CorruptFile(f"unknown format version {version}")
    if len(data) < 16 + manifest_len:
        raise CorruptFile("truncated manifest")
    try:
        manifest = json.loads(data[16 : 16 + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"unreadable manifest: {exc}") from exc
    blobs = data[16 + manifest_len :]
    kind = manifest.get("kind")
    if kind == "quantized":
        return _decode_quantized(manifest, blobs)
    if kind == "float":
        return _decode_float(manifest, blobs)
    raise CorruptFile(f"unknown model kind {kind!r}")


def save_model_file(model: AnyModel, path) -> None:
    with open(path, "wb") as f:
        f.write(save_model(model))


def load_model_file(path) -> AnyModel:
    with open(path, "rb") as f:
        return load_model(f.read())


class _BlobWriter:
    def __init__(self):
        self.chunks: list[bytes] = []
        self.offset = 0

    def add(self, raw: bytes) -> dict:
        entry = {"offset": self.offset, "length": len(raw)}
        self.chunks.append(raw)
        self.offset += len(raw)
        return entry

    def data(self) -> bytes:
        return b"".join(self.chunks)


def _blob(blobs: bytes, entry: dict, dtype: str) -> np.ndarray:
    offset, length = entry["offset"], entry["length"]
    if offset < 0 or offset + length > len(blobs):
        raise CorruptFile(f"blob [{offset}, {offset + length}) outside file")
    return np.frombuffer(blobs, dtype=np.dtype(dtype), count=length // np.dtype(dtype).itemsize,
                         offset=offset)


def _config_dict(cfg: NetworkConfig) -> dict:
    return {
        "in_channels": cfg.in_channels, "base_channels": cfg.base_channels,
        "groups": cfg.groups, "weight_bits": cfg.weight_bits,
        "num_classes": cfg.num_classes, "input_hw": cfg.input_hw,
        "threshold": cfg.threshold,
    }


def _config_from(d: dict) -> NetworkConfig:
    try:
        return NetworkConfig(**d)
    except TypeError as exc:
        raise CorruptFile(f"bad config section: {exc}") from exc


def _plan_dict(p: ConvPlan) -> dict:
    return {
        "name": p.name, "in_channels": p.in_channels, "out_channels": p.out_channels,
        "kernel": p.kernel, "stride": p.stride, "padding": p.padding, "groups": p.groups,
        "is_encoding": p.is_encoding, "is_residual_1x1": p.is_residual_1x1,
    }


def _plan_from(d: dict) -> ConvPlan:
    try:
        return ConvPlan(**{k: d[k] for k in (
            "name", "in_channels", "out_channels", "kernel", "stride", "padding",
            "groups", "is_encoding", "is_residual_1x1")})
    except KeyError as exc:
        raise CorruptFile(f"layer entry missing field {exc}") from exc


def _encode_quantized(model: NetworkGraph):
    writer = _BlobWriter()

    def conv_entry(layer: ConvLayerSpec) -> dict:
        entry = _plan_dict(ConvPlan(
            layer.name, layer.in_channels, layer.out_channels, layer.kernel,
            layer.stride, layer.padding, layer.groups, layer.is_encoding,
            layer.is_residual_1x1))
        entry.update({
            "weight_bits": layer.weights.params.bits,
            "weight_scale_exp": layer.weights.params.scale_exp,
            "acc_exp": layer.acc_exp,
            "threshold_q": layer.threshold_q,
            "weights": writer.add(layer.weights.values.astype("<i1").tobytes()),
            "bias": writer.add(layer.bias.astype("<i4").tobytes()),
        })
        return entry

    layers = [conv_entry(model.encoding)]
    blocks = []
    for block in model.blocks:
        layers.append(conv_entry(block.conv_a))
        layers.append(conv_entry(block.conv_b))
        names = [block.conv_a.name, block.conv_b.name, None]
        if block.shortcut is not None:
            layers.append(conv_entry(block.shortcut))
            names[2] = block.shortcut.name
        blocks.append(names)
    fc_entry = {
        "in_features": model.fc.in_features, "out_features": model.fc.out_features,
        "weight_bits": model.fc.weights.params.bits,
        "weight_scale_exp": model.fc.weights.params.scale_exp,
        "acc_exp": model.fc.acc_exp,
        "weights": writer.add(model.fc.weights.values.astype("<i1").tobytes()),
        "bias": writer.add(model.fc.bias.astype("<i4").tobytes()),
    }
    manifest = {
        "kind": "quantized",
        "config": _config_dict(model.config),
        "input_quant": {"bits": model.input_params.bits,
                        "scale_exp": model.input_params.scale_exp},
        "layers": layers,
        "blocks": blocks,
        "pool": {"channels": model.pool.channels, "kind": model.pool.kind},
        "fc": fc_entry,
    }
    return manifest, writer.data()


def _decode_quantized(manifest: dict, blobs: bytes) -> NetworkGraph:
    cfg = _config_from(manifest["config"])
    iq = manifest["input_quant"]
    input_params = QuantParams(bits=iq["bits"], scale_exp=iq["scale_exp"])

    def conv_from(entry: dict) -> ConvLayerSpec:
        plan = _plan_from(entry)
        params = QuantParams(entry["weight_bits"], entry["weight_scale_exp"])
        shape = (plan.out_channels, plan.in_channels // plan.groups, plan.kernel, plan.kernel)
        w = _blob(blobs, entry["weights"], "<i1")
        if w.size != np.prod(shape):
            raise CorruptFile(f"{plan.name}: weight blob holds {w.size} values, "
                              f"manifest shape needs {np.prod(shape)}")
        bias = _blob(blobs, entry["bias"], "<i4")
        if bias.size != plan.out_channels:
            raise CorruptFile(f"{plan.name}: bias blob length mismatch")
        return ConvLayerSpec(
            name=plan.name, in_channels=plan.in_channels, out_channels=plan.out_channels,
            kernel=plan.kernel, stride=plan.stride, padding=plan.padding, groups=plan.groups,
            weights=IntTensor(w.astype(np.int64).reshape(shape), params),
            bias=bias.astype(np.int64), acc_exp=entry["acc_exp"],
            threshold_q=entry["threshold_q"], is_encoding=plan.is_encoding,
            is_residual_1x1=plan.is_residual_1x1,
        )

    try:
        by_name = {e["name"]: e for e in manifest["layers"]}
        encoding = conv_from(manifest["layers"][0])
        blocks = []
        for a_name, b_name, s_name in manifest["blocks"]:
            blocks.append(ResidualBlock(
                conv_a=conv_from(by_name[a_name]),
                conv_b=conv_from(by_name[b_name]),
                shortcut=None if s_name is None else conv_from(by_name[s_name]),
            ))
        fce = manifest["fc"]
        fc_params = QuantParams(fce["weight_bits"], fce["weight_scale_exp"])
        fw = _blob(blobs, fce["weights"], "<i1")
        shape = (fce["out_features"], fce["in_features"])
        if fw.size != np.prod(shape):
            raise CorruptFile("fc weight blob length mismatch")
        fb = _blob(blobs, fce["bias"], "<i4")
        if fb.size != fce["out_features"]:
            raise CorruptFile("fc bias blob length mismatch")
        fc = FcSpec(name="fc", in_features=fce["in_features"], out_features=fce["out_features"],
                    weights=IntTensor(fw.astype(np.int64).reshape(shape), fc_params),
                    bias=fb.astype(np.int64), acc_exp=fce["acc_exp"])
        pool = PoolSpec(channels=manifest["pool"]["channels"], kind=manifest["pool"]["kind"])
    except (KeyError, IndexError, TypeError) as exc:
        raise CorruptFile(f"manifest missing required structure: {exc}") from exc
    return NetworkGraph(config=cfg, input_params=input_params, encoding=encoding,
                        blocks=tuple(blocks), pool=pool, fc=fc)


def _encode_float(model: FloatNetwork):
    writer = _BlobWriter()

    def conv_entry(layer: FloatConvLayer) -> dict:
        entry = _plan_dict(layer.plan)
        entry.update({
            "threshold": layer.threshold,
            "weights": writer.add(np.ascontiguousarray(layer.weights, "<f8").tobytes()),
            "bias": writer.add(np.ascontiguousarray(layer.bias, "<f8").tobytes()),
        })
        if layer.bn is not None:
            entry["bn"] = {
                "gamma": writer.add(np.ascontiguousarray(layer.bn.gamma, "<f8").tobytes()),
                "beta": writer.add(np.ascontiguousarray(layer.bn.beta, "<f8").tobytes()),
                "mean": writer.add(np.ascontiguousarray(layer.bn.mean, "<f8").tobytes()),
                "var": writer.add(np.ascontiguousarray(layer.bn.var, "<f8").tobytes()),
                "eps": layer.bn.eps,
            }
        return entry

    layers = [conv_entry(model.encoding)]
    blocks = []
    for block in model.blocks:
        layers.append(conv_entry(block.conv_a))
        layers.append(conv_entry(block.conv_b))
        names = [block.conv_a.plan.name, block.conv_b.plan.name, None]
        if block.shortcut is not None:
            layers.append(conv_entry(block.shortcut))
            names[2] = block.shortcut.plan.name
        blocks.append(names)
    manifest = {
        "kind": "float",
        "fused": model.fused,
        "config": _config_dict(model.config),
        "layers": layers,
        "blocks": blocks,
        "fc": {
            "weights": writer.add(np.ascontiguousarray(model.fc.weights, "<f8").tobytes()),
            "bias": writer.add(np.ascontiguousarray(model.fc.bias, "<f8").tobytes()),
        },
    }
    return manifest, writer.data()


def _decode_float(manifest: dict, blobs: bytes) -> FloatNetwork:
    cfg = _config_from(manifest["config"])

    def conv_from(entry: dict) -> FloatConvLayer:
        plan = _plan_from(entry)
        shape = (plan.out_channels, plan.in_channels // plan.groups, plan.kernel, plan.kernel)
        w = _blob(blobs, entry["weights"], "<f8")
        if w.size != np.prod(shape):
            raise CorruptFile(f"{plan.name}: float weight blob length mismatch")
        bias = _blob(blobs, entry["bias"], "<f8")
        if bias.size != plan.out_channels:
            raise CorruptFile(f"{plan.name}: float bias blob length mismatch")
        bn = None
        if "bn" in entry:
            bne = entry["bn"]
            fields = {}
            for key in ("gamma", "beta", "mean", "var"):
                arr = _blob(blobs, bne[key], "<f8")
                if arr.size != plan.out_channels:
                    raise CorruptFile(f"{plan.name}: bn {key} blob length mismatch")
                fields[key] = arr.astype(np.float64)
            bn = BnParams(**fields, eps=bne["eps"])
        return FloatConvLayer(plan=plan, weights=w.astype(np.float64).reshape(shape),
                              bias=bias.astype(np.float64), bn=bn,
                              threshold=entry["threshold"])

    try:
        by_name = {e["name"]: e for e in manifest["layers"]}
        encoding = conv_from(manifest["layers"][0])
        blocks = []
        for a_name, b_name, s_name in manifest["blocks"]:
            blocks.append(FloatBlock(
                conv_a=conv_from(by_name[a_name]),
                conv_b=conv_from(by_name[b_name]),
                shortcut=None if s_name is None else conv_from(by_name[s_name]),
            ))
        plan = resnet10_plan(cfg)
        fce = manifest["fc"]
        fw = _blob(blobs, fce["weights"], "<f8").astype(np.float64)
        fb = _blob(blobs, fce["bias"], "<f8").astype(np.float64)
        if fw.size != plan.fc_in * plan.fc_out or fb.size != plan.fc_out:
            raise CorruptFile("fc float blob length mismatch")
        fc = FloatFc(weights=fw.reshape(plan.fc_out, plan.fc_in), bias=fb)
    except (KeyError, IndexError, TypeError) as exc:
        raise CorruptFile(f"manifest missing required structure: {exc}") from exc
    return FloatNetwork(config=cfg, encoding=encoding, blocks=tuple(blocks), fc=fc)


def models_equal(a: AnyModel, b: AnyModel) -> bool:
    """Field-for-field equality, arrays compared exactly."""
    return save_model(a) == save_model(b)


# ---------------------------------------------------------------------------
# Physical weight packing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PackedWeights:
    """A layer's weights in the byte order its PE array consumes them:
    tile by schedule tile, a pure permutation of the logical tensor."""

    layer_name: str
    geometry: PeArrayGeometry
    data: bytes


def pack_weights(layer: ConvLayerSpec, geom: PeArrayGeometry) -> PackedWeights:
    schedule = tile_layer(layer, geom)
    return PackedWeights(layer.name, geom, pack_weight_bytes(layer, schedule))


def unpack_weights(packed: PackedWeights, layer: ConvLayerSpec) -> IntTensor:
    schedule = tile_layer(layer, packed.geometry)
    values = unpack_weight_bytes(packed.data, layer, schedule)
    return IntTensor(values, layer.weights.params)


# ---------------------------------------------------------------------------
# CIFAR-10 binary batches
# ---------------------------------------------------------------------------

RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes
NUM_CLASSES = 10


@dataclass(frozen=True)
class Cifar10Set:
    """Parsed records: labels in [0, 9] and channel-planar RGB pixels."""

    labels: np.ndarray  # uint8 (n,)
    images: np.ndarray  # uint8 (n, 3, 32, 32)

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def load_cifar10(path) -> Cifar10Set:
    """Parse a binary batch file: records of one label byte followed by
    3072 pixel bytes. Any whole number of records is accepted; a partial
    record or an out-of-range label is an error."""
    with open(path, "rb") as f:
        data = f.read()
    return parse_cifar10(data)


def parse_cifar10(data: bytes) -> Cifar10Set:
    if len(data) == 0 or len(data) % RECORD_BYTES:
        raise CorruptFile(
            f"batch length {len(data)} is not a positive multiple of {RECORD_BYTES}"
        )
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = raw[:, 0].copy()
    if labels.max(initial=0) >= NUM_CLASSES:
        bad = int(labels[labels >= NUM_CLASSES][0])
        raise BadLabel(f"label {bad} outside [0, {NUM_CLASSES - 1}]")
    images = raw[:, 1:].reshape(-1, 3, 32, 32).copy()
    return Cifar10Set(labels=labels, images=images)


def write_cifar10(dataset: Cifar10Set, path) -> None:
    """Inverse of load_cifar10; used to produce synthetic batches."""
    records = np.concatenate(
        [dataset.labels[:, None], dataset.images.reshape(len(dataset), -1)], axis=1
    ).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(records.tobytes())
