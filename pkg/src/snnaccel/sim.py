"""Cycle-level simulator of the pipelined PE-array accelerator.

The simulator executes the same integer arithmetic as the reference engine,
but through the hardware dataflow: per-layer PE arrays, output-channel
tiles, grouped-convolution array reuse with partial-sum accumulation, and
packed weights streamed from a modeled BRAM. Timing follows a four-stage
intra-layer pipeline (padding, input, convolution, output) and an
image-granularity inter-layer pipeline, so every run produces both
bit-exact feature maps and cycle counts.

Per-stage costs that depend on implementation details are externalized to
TimingConfig; the defaults are deliberate, documented choices that keep
the default network's modeled latency in a realistic band.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import numpy as np

from .engine import (
    AccMap,
    InferenceResult,
    exact_int_matmul,
    fully_connected,
    global_avg_pool,
    lift_spikes,
    quantize_input,
    residual_add,
    window_columns,
)
from .errors import CapacityExceeded, GeometryMismatch, ShapeMismatch
from .model import ConvLayerSpec, NetworkGraph, threshold_activate

BRAM_BLOCK_BITS = 36 * 1024  # one modeled 36 Kbit block


# ---------------------------------------------------------------------------
# Geometry and configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PeArrayGeometry:
    """One layer's dedicated PE array.

    core_rows spans input channels, core_cols spans output channels, and
    each core holds kernel*kernel processing elements so one core finishes
    one kernel window per clock. uses_multipliers distinguishes DSP-class
    multiply-add arrays (encoding and 1x1 residual paths) from the
    spike-gated adder arrays of the binary main path.
    """

    core_rows: int
    core_cols: int
    pes_per_core: int
    uses_multipliers: bool

    def __post_init__(self):
        if self.core_rows < 1 or self.core_cols < 1 or self.pes_per_core < 1:
            raise GeometryMismatch("geometry extents must be at least 1")

    @property
    def units(self) -> int:
        return self.core_rows * self.core_cols * self.pes_per_core


ENCODING_GEOMETRY = PeArrayGeometry(3, 64, 9, True)
MAIN_PATH_GEOMETRY = PeArrayGeometry(8, 8, 9, False)
RESIDUAL_GEOMETRY = PeArrayGeometry(64, 8, 1, True)


def default_geometries(model: NetworkGraph) -> dict[str, PeArrayGeometry]:
    """Per-layer array assignment: encode 3x64, main path 8x8, 1x1 64x8."""
    geoms = {}
    for layer in model.conv_layers():
        if layer.is_encoding:
            geoms[layer.name] = ENCODING_GEOMETRY
        elif layer.is_residual_1x1:
            geoms[layer.name] = RESIDUAL_GEOMETRY
        else:
            geoms[layer.name] = MAIN_PATH_GEOMETRY
    return geoms


@dataclass(frozen=True)
class TimingConfig:
    """Cycle costs the hardware does not pin down, with explicit defaults.

    Every convolution invocation sweeps its full output extent (the arrays
    are dense, not zero-skipping); the four intra-layer stages overlap
    across invocations. fc_macs_per_cycle defaults to the modeled FC
    multiplier budget; the pool is a serial single-element-per-cycle sweep.
    """

    weight_load_cycles_per_tile: int = 8
    array_fill_cycles: int = 4
    pad_cycles_per_position: int = 1
    input_cycles_per_position: int = 1
    output_cycles_per_position: int = 1
    pool_elements_per_cycle: int = 1
    fc_macs_per_cycle: int = 768

    def compute_cycles(self, positions: int) -> int:
        return positions + self.weight_load_cycles_per_tile + self.array_fill_cycles


@dataclass(frozen=True)
class EnergyWeights:
    """Relative costs for the operation-count energy proxy (unitless)."""

    mac_op: float = 4.0
    gated_add_op: float = 1.0
    bram_bit: float = 0.05


@dataclass(frozen=True)
class BramConfig:
    total_blocks: float = 674.5
    block_bits: int = BRAM_BLOCK_BITS
    ports: int = 2

    @property
    def capacity_bits(self) -> int:
        return int(self.total_blocks * self.block_bits)


# ---------------------------------------------------------------------------
# Tile schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Tile:
    """One PE-array invocation: an output-channel tile crossed with one
    input-channel chunk of its group, swept over the full output extent."""

    out_start: int
    out_stop: int
    in_start: int
    in_stop: int
    group: int
    pass_index: int  # 1-based within the output tile
    out_h: int
    out_w: int

    @property
    def out_size(self) -> int:
        return self.out_stop - self.out_start

    @property
    def in_size(self) -> int:
        return self.in_stop - self.in_start

    @property
    def positions(self) -> int:
        return self.out_h * self.out_w


@dataclass(frozen=True)
class TileSchedule:
    layer_name: str
    geometry: PeArrayGeometry
    tiles: tuple[Tile, ...]

    @property
    def invocations(self) -> int:
        return len(self.tiles)

    @property
    def passes_per_tile(self) -> int:
        return max(t.pass_index for t in self.tiles)


def tile_layer(layer: ConvLayerSpec, geom: PeArrayGeometry,
               in_hw: tuple[int, int] | None = None) -> TileSchedule:
    """Enumerate the array invocations covering one layer.

    Output channels split into tiles of core_cols (never crossing a group
    boundary); each tile takes ceil(in_per_group / core_rows) reuse passes
    over its group's input channels. Passes for one output tile are
    contiguous, so the group's input maps recirculate without reloading.
    """
    if geom.pes_per_core != layer.kernel * layer.kernel:
        raise GeometryMismatch(
            f"{layer.name}: geometry provides {geom.pes_per_core} PEs per core, "
            f"kernel {layer.kernel}x{layer.kernel} needs {layer.kernel * layer.kernel}"
        )
    if in_hw is None:
        in_hw = (0, 0)  # spatial extent resolved at run time
        out_h, out_w = 0, 0
    else:
        out_h, out_w = layer.out_hw(in_hw)
    in_per_group = layer.in_channels // layer.groups
    out_per_group = layer.out_channels // layer.groups
    tiles = []
    for g in range(layer.groups):
        in_base = g * in_per_group
        for out_start in range(g * out_per_group, (g + 1) * out_per_group, geom.core_cols):
            out_stop = min(out_start + geom.core_cols, (g + 1) * out_per_group)
            n_passes = -(-in_per_group // geom.core_rows)
            for p in range(n_passes):
                in_start = in_base + p * geom.core_rows
                in_stop = min(in_start + geom.core_rows, in_base + in_per_group)
                tiles.append(Tile(out_start, out_stop, in_start, in_stop,
                                  g, p + 1, out_h, out_w))
    return TileSchedule(layer.name, geom, tuple(tiles))


def schedule_with_extent(schedule: TileSchedule, layer: ConvLayerSpec,
                         in_hw: tuple[int, int]) -> TileSchedule:
    out_h, out_w = layer.out_hw(in_hw)
    tiles = tuple(replace(t, out_h=out_h, out_w=out_w) for t in schedule.tiles)
    return TileSchedule(schedule.layer_name, schedule.geometry, tiles)


def schedule_segments(layer: ConvLayerSpec, schedule: TileSchedule) -> Iterator[tuple[Tile, int, int]]:
    """(tile, byte offset, byte length) of each tile's weights in the packed
    stream, in the exact order the array consumes them."""
    offset = 0
    taps = layer.kernel * layer.kernel
    for tile in schedule.tiles:
        length = tile.out_size * tile.in_size * taps
        yield tile, offset, length
        offset += length


def pack_weight_bytes(layer: ConvLayerSpec, schedule: TileSchedule) -> bytes:
    """Weights serialized tile by tile: out channel, then in channel within
    the group, then kernel row-major. A permutation of the logical tensor."""
    in_per_group = layer.in_channels // layer.groups
    chunks = []
    for tile in schedule.tiles:
        rel_start = tile.in_start - tile.group * in_per_group
        rel_stop = tile.in_stop - tile.group * in_per_group
        block = layer.weights.values[tile.out_start:tile.out_stop, rel_start:rel_stop]
        chunks.append(block.astype(np.int8).tobytes())
    return b"".join(chunks)


def unpack_weight_bytes(data: bytes, layer: ConvLayerSpec, schedule: TileSchedule) -> np.ndarray:
    """Inverse of pack_weight_bytes; returns the logical (out, in/g, k, k)
    int64 tensor."""
    expected = layer.weight_count
    if len(data) != expected:
        raise ShapeMismatch(f"{layer.name}: packed length {len(data)} != {expected}")
    in_per_group = layer.in_channels // layer.groups
    k = layer.kernel
    out = np.zeros((layer.out_channels, in_per_group, k, k), dtype=np.int64)
    flat = np.frombuffer(data, dtype=np.int8)
    for tile, offset, length in schedule_segments(layer, schedule):
        rel_start = tile.in_start - tile.group * in_per_group
        rel_stop = tile.in_stop - tile.group * in_per_group
        block = flat[offset : offset + length].reshape(tile.out_size, tile.in_size, k, k)
        out[tile.out_start:tile.out_stop, rel_start:rel_stop] = block
    return out


# ---------------------------------------------------------------------------
# BRAM model
# ---------------------------------------------------------------------------

@dataclass
class AccessStats:
    reads: int = 0
    writes: int = 0
    bits_read: int = 0
    bits_written: int = 0
    first_read_seq: Optional[int] = None
    last_read_seq: Optional[int] = None
    first_write_seq: Optional[int] = None
    last_write_seq: Optional[int] = None


@dataclass
class BramBank:
    """Capacity, ports, and monotone access counters; not a bank-conflict
    model. Every access gets a global sequence number so event ordering
    (feature written before read) is checkable after a run."""

    name: str
    capacity_bits: int
    ports: int = 2
    occupancy_bits: int = 0
    reads: int = 0
    writes: int = 0
    bits_read: int = 0
    bits_written: int = 0
    per_tag: dict = field(default_factory=dict)

    def allocate(self, tag: str, bits: int) -> None:
        self.occupancy_bits += bits
        if self.occupancy_bits > self.capacity_bits:
            raise CapacityExceeded(
                f"{self.name}: occupancy {self.occupancy_bits} bits exceeds "
                f"capacity {self.capacity_bits} bits (allocating {tag})"
            )

    def _stats(self, tag: str) -> AccessStats:
        return self.per_tag.setdefault(tag, AccessStats())

    def read(self, tag: str, bits: int, seq: int) -> None:
        self.reads += 1
        self.bits_read += bits
        s = self._stats(tag)
        s.reads += 1
        s.bits_read += bits
        if s.first_read_seq is None:
            s.first_read_seq = seq
        s.last_read_seq = seq

    def write(self, tag: str, bits: int, seq: int) -> None:
        self.writes += 1
        self.bits_written += bits
        s = self._stats(tag)
        s.writes += 1
        s.bits_written += bits
        if s.first_write_seq is None:
            s.first_write_seq = seq
        s.last_write_seq = seq

    @property
    def bits_moved(self) -> int:
        return self.bits_read + self.bits_written


# ---------------------------------------------------------------------------
# PE-array execution
# ---------------------------------------------------------------------------

def run_pe_array(tile: Tile, tile_weights: np.ndarray, window_cols: np.ndarray,
                 timing: TimingConfig,
                 input_abs_max: float | None = None) -> tuple[np.ndarray, int]:
    """One array invocation: sweep every output position of the tile.

    tile_weights is the (out, in, k, k) slice decoded from the packed
    stream; window_cols is the padded, sliding-window-processed input
    stream of the tile's channel chunk, shaped (in, kernel*kernel,
    positions) as produced by engine.window_columns. The sweep is dense
    (no zero skipping), so the cycle count is input-independent: one
    position per clock plus the configured weight-load and fill overheads.
    """
    out_size = tile.out_size
    in_size, k2, positions = window_cols.shape
    if in_size != tile.in_size:
        raise ShapeMismatch(
            f"tile expects {tile.in_size} input channels, stream has {in_size}"
        )
    w2d = np.asarray(tile_weights, np.float64).reshape(out_size, in_size * k2)
    if input_abs_max is None:
        input_abs_max = float(np.abs(window_cols).max(initial=0.0))
    bound = in_size * k2 * input_abs_max * float(np.abs(w2d).max(initial=0.0))
    flat = exact_int_matmul(w2d, window_cols.reshape(in_size * k2, positions), bound)
    partial = flat.reshape(out_size, tile.out_h, tile.out_w)
    return partial, timing.compute_cycles(tile.positions)


def accumulate_group(partials: list[np.ndarray]) -> np.ndarray:
    """Sum the reuse passes of one output tile into its final result."""
    if not partials:
        raise ShapeMismatch("accumulate_group needs at least one partial map")
    first = partials[0]
    for p in partials[1:]:
        if p.shape != first.shape:
            raise ShapeMismatch(f"partial shapes differ: {p.shape} vs {first.shape}")
    out = np.zeros_like(first)
    for p in partials:
        out += p
    return out


@dataclass
class LayerRun:
    name: str
    cycles: int
    compute_cycles: int
    invocations: int
    mac_ops: int
    stage_cycles: tuple[int, int, int, int]


def simulate_layer(layer: ConvLayerSpec, geom: PeArrayGeometry, x: np.ndarray,
                   timing: TimingConfig | None = None,
                   bram: Optional["SimMachine"] = None,
                   input_tag: str = "feat:input",
                   input_bits_per_value: int | None = None) -> tuple[AccMap, LayerRun]:
    """Run one convolution layer through its tile schedule.

    Functionally equal to the reference conv (checked by the test suite on
    every default layer); the cycle count comes from pipelining the four
    stages (pad, input, compute, output) across invocations.
    """
    timing = timing or TimingConfig()
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] != layer.in_channels:
        raise ShapeMismatch(f"{layer.name}: bad input shape {x.shape}")
    schedule = tile_layer(layer, geom, in_hw=x.shape[1:])
    packed = pack_weight_bytes(layer, schedule)
    flat = np.frombuffer(packed, dtype=np.int8)

    cols, (out_h, out_w) = window_columns(x, layer.kernel, layer.stride, layer.padding)
    x_abs_max = float(np.abs(x).max(initial=0.0))
    in_positions = (x.shape[1] + 2 * layer.padding) * (x.shape[2] + 2 * layer.padding)
    value_bits = input_bits_per_value if input_bits_per_value is not None else (
        8 if layer.is_encoding else 1
    )

    out = np.zeros((layer.out_channels, out_h, out_w), dtype=np.int64)
    stage_durs = []
    partials: list[np.ndarray] = []
    mac_ops = 0
    for tile, offset, length in schedule_segments(layer, schedule):
        tile_w = flat[offset : offset + length].astype(np.int64).reshape(
            tile.out_size, tile.in_size, layer.kernel, layer.kernel
        )
        partial, _ = run_pe_array(tile, tile_w, cols[tile.in_start : tile.in_stop],
                                  timing, input_abs_max=x_abs_max)
        positions = tile.positions
        mac_ops += positions * geom.units
        if bram is not None:
            bram.weight_read(layer.name, length * 8)
            bram.feature_read(input_tag, tile.in_size * in_positions * value_bits)
        partials.append(partial)
        if tile.pass_index == schedule.passes_per_tile:
            # last reuse pass of this output tile: fold the partial sums
            out[tile.out_start : tile.out_stop] += accumulate_group(partials)
            partials = []
            if bram is not None:
                bram.feature_write(f"feat:{layer.name}", tile.out_size * positions)
        stage_durs.append((
            positions * timing.pad_cycles_per_position,
            positions * timing.input_cycles_per_position,
            timing.compute_cycles(positions),
            positions * timing.output_cycles_per_position,
        ))
    out += layer.bias[:, None, None]
    cycles = _pipeline_cycles(stage_durs)
    compute = sum(t.positions for t in schedule.tiles)
    stage_totals = tuple(int(sum(d[s] for d in stage_durs)) for s in range(4))
    run = LayerRun(layer.name, cycles, compute, schedule.invocations, mac_ops, stage_totals)
    return AccMap(out, layer.acc_exp), run


def _pipeline_cycles(stage_durations: list[tuple[int, int, int, int]]) -> int:
    """Completion time of items flowing through four overlapping stages."""
    free = [0, 0, 0, 0]
    for durs in stage_durations:
        t = 0
        for s, d in enumerate(durs):
            t = max(t, free[s]) + d
            free[s] = t
    return free[3]


# ---------------------------------------------------------------------------
# Whole-network simulation
# ---------------------------------------------------------------------------

class SimMachine:
    """Mutable state of one simulation run: the modeled BRAM plus a global
    access sequence counter. A run owns its machine exclusively; distinct
    runs never share one."""

    def __init__(self, model: NetworkGraph, bram_cfg: BramConfig | None = None):
        self.bram_cfg = bram_cfg or BramConfig()
        self.bram = BramBank("bram", self.bram_cfg.capacity_bits, self.bram_cfg.ports)
        self._seq = 0
        self.weight_bits = 0
        self.feature_bits = 0
        self._allocate(model)

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _allocate(self, model: NetworkGraph) -> None:
        cfg = model.config
        hw = (cfg.input_hw, cfg.input_hw)
        self._alloc_weights("w:input", 0)
        in_bits = cfg.in_channels * hw[0] * hw[1] * model.input_params.bits
        self._alloc_features("feat:input", in_bits)
        for layer in model.conv_layers():
            bits = layer.weight_count * layer.weights.params.bits
            bits += layer.out_channels * 32  # bias
            if layer.threshold_q is not None:
                bits += 32
            self._alloc_weights(f"w:{layer.name}", bits)
        fc_bits = model.fc.weight_count * model.fc.weights.params.bits
        fc_bits += model.fc.out_features * 32
        self._alloc_weights("w:fc", fc_bits)
        # Binary feature buffers: every conv output stays resident while the
        # next pipeline stage consumes it.
        out_hw = model.encoding.out_hw(hw)
        self._alloc_features(f"feat:{model.encoding.name}",
                             model.encoding.out_channels * out_hw[0] * out_hw[1])
        for block in model.blocks:
            mid_hw = block.conv_a.out_hw(out_hw)
            end_hw = block.conv_b.out_hw(mid_hw)
            self._alloc_features(f"feat:{block.conv_a.name}",
                                 block.conv_a.out_channels * mid_hw[0] * mid_hw[1])
            self._alloc_features(f"feat:{block.conv_b.name}",
                                 block.conv_b.out_channels * end_hw[0] * end_hw[1])
            if block.shortcut is not None:
                self._alloc_features(f"feat:{block.shortcut.name}",
                                     block.shortcut.out_channels * end_hw[0] * end_hw[1])
            out_hw = end_hw

    def _alloc_weights(self, tag: str, bits: int) -> None:
        self.weight_bits += bits
        self.bram.allocate(tag, bits)

    def _alloc_features(self, tag: str, bits: int) -> None:
        self.feature_bits += bits
        self.bram.allocate(tag, bits)

    def weight_read(self, layer_name: str, bits: int) -> None:
        self.bram.read(f"w:{layer_name}", bits, self._next_seq())

    def feature_read(self, tag: str, bits: int) -> None:
        self.bram.read(tag, bits, self._next_seq())

    def feature_write(self, tag: str, bits: int) -> None:
        self.bram.write(tag, bits, self._next_seq())


@dataclass(frozen=True)
class SimResult:
    """Functional output plus per-layer timing of one simulated image."""

    result: InferenceResult
    layer_runs: dict[str, LayerRun]
    machine: SimMachine
    spike_maps: dict[str, np.ndarray]


def simulate_network(image: np.ndarray, model: NetworkGraph,
                     geometries: dict[str, PeArrayGeometry] | None = None,
                     timing: TimingConfig | None = None,
                     bram_cfg: BramConfig | None = None,
                     machine: SimMachine | None = None) -> SimResult:
    """Run one image through the full accelerator dataflow.

    Bit-exact equal to the reference engine (the acceptance suite asserts
    it); also returns per-layer cycle counts and the BRAM access record.
    """
    geometries = geometries or default_geometries(model)
    timing = timing or TimingConfig()
    machine = machine or SimMachine(model, bram_cfg)
    runs: dict[str, LayerRun] = {}
    spikes_out: dict[str, np.ndarray] = {}

    q_in = quantize_input(image, model)
    machine.feature_write("feat:input", int(np.asarray(q_in.values).size) * model.input_params.bits)

    enc = model.encoding
    acc, run = simulate_layer(enc, geometries[enc.name], q_in.values, timing, machine,
                              input_tag="feat:input",
                              input_bits_per_value=model.input_params.bits)
    runs[enc.name] = run
    spikes = threshold_activate(acc.values, enc.threshold_q)
    spikes_out[enc.name] = spikes
    producer = f"feat:{enc.name}"

    for block in model.blocks:
        a, run_a = simulate_layer(block.conv_a, geometries[block.conv_a.name], spikes,
                                  timing, machine, input_tag=producer)
        runs[block.conv_a.name] = run_a
        spikes_a = threshold_activate(a.values, block.conv_a.threshold_q)
        spikes_out[block.conv_a.name] = spikes_a

        b, run_b = simulate_layer(block.conv_b, geometries[block.conv_b.name], spikes_a,
                                  timing, machine, input_tag=f"feat:{block.conv_a.name}")
        runs[block.conv_b.name] = run_b

        if block.shortcut is None:
            shortcut = lift_spikes(spikes, b.scale_exp)
        else:
            sc, run_s = simulate_layer(block.shortcut, geometries[block.shortcut.name],
                                       spikes, timing, machine, input_tag=producer)
            runs[block.shortcut.name] = run_s
            shortcut = sc
        joined = residual_add(b, shortcut)
        spikes = threshold_activate(joined.values, block.conv_b.threshold_q)
        spikes_out[block.conv_b.name] = spikes
        producer = f"feat:{block.conv_b.name}"

    pooled = global_avg_pool(spikes)
    machine.feature_read(producer, int(spikes.size))
    pool_elems = int(spikes.size)
    runs["pool"] = LayerRun("pool", -(-pool_elems // timing.pool_elements_per_cycle),
                            pool_elems, 1, 0, (0, 0, 0, 0))

    result = fully_connected(pooled, model.fc)
    machine.weight_read("fc", model.fc.weight_count * model.fc.weights.params.bits)
    fc_macs = model.fc.weight_count
    runs["fc"] = LayerRun("fc", -(-fc_macs // timing.fc_macs_per_cycle) + timing.array_fill_cycles,
                          fc_macs, 1, fc_macs, (0, 0, 0, 0))
    return SimResult(result=result, layer_runs=runs, machine=machine, spike_maps=spikes_out)


def verify_trace_causality(model: NetworkGraph, machine: SimMachine) -> bool:
    """Every feature buffer must be fully written before its first read."""
    stats = machine.bram.per_tag
    for tag, s in stats.items():
        if not tag.startswith("feat:"):
            continue
        if s.first_read_seq is None or s.last_write_seq is None:
            continue
        if s.first_read_seq <= s.last_write_seq:
            return False
    return True


# ---------------------------------------------------------------------------
# Pipeline and resource reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineReport:
    """Timing of the image-granularity inter-layer pipeline.

    Every array (shortcut included), the pool, and the FC form stages;
    first-image latency is the sum of stage cycles, the initiation interval
    is the largest stage, and throughput is clock / II once the pipeline is
    full. fps_latency is the single-image figure (1 / latency), reported
    alongside because published FPS numbers often use that convention.
    """

    clock_hz: float
    stage_cycles: dict[str, int]
    latency_cycles: int
    ii_cycles: int
    n_images: int
    total_cycles: int

    @property
    def latency_ms(self) -> float:
        return self.latency_cycles / self.clock_hz * 1e3

    @property
    def fps_ii(self) -> float:
        return self.clock_hz / self.ii_cycles

    @property
    def fps_latency(self) -> float:
        return self.clock_hz / self.latency_cycles

    @property
    def stage_occupancy(self) -> dict[str, float]:
        return {name: cycles / self.ii_cycles for name, cycles in self.stage_cycles.items()}


def simulate_pipeline(model: NetworkGraph, n_images: int = 1,
                      geometries: dict[str, PeArrayGeometry] | None = None,
                      timing: TimingConfig | None = None,
                      clock_hz: float = 100e6,
                      bram_cfg: BramConfig | None = None) -> PipelineReport:
    """Timing report for the default network at the given clock.

    Cycle counts are input-independent (dense sweeps), so one representative
    image is enough to time every stage.
    """
    if n_images < 1:
        raise ValueError("n_images must be at least 1")
    if clock_hz <= 0:
        raise ValueError("clock frequency must be positive")
    cfg = model.config
    rng = np.random.default_rng(0)
    image = rng.random((cfg.in_channels, cfg.input_hw, cfg.input_hw))
    sim = simulate_network(image, model, geometries, timing, bram_cfg)
    stage_cycles = {name: run.cycles for name, run in sim.layer_runs.items()}
    latency = sum(stage_cycles.values())
    ii = max(stage_cycles.values())
    total = latency + (n_images - 1) * ii
    return PipelineReport(
        clock_hz=clock_hz, stage_cycles=stage_cycles, latency_cycles=latency,
        ii_cycles=ii, n_images=n_images, total_cycles=total,
    )


@dataclass(frozen=True)
class ResourceReport:
    """Modeled hardware inventory and the operation-count energy proxy."""

    per_layer_units: dict[str, int]
    per_layer_multiplier_units: dict[str, int]
    total_units: int
    total_multiplier_units: int
    total_adder_units: int
    weight_bits: int
    feature_bits: int
    occupancy_bits: int
    capacity_bits: int
    mac_ops: int
    gated_add_ops: int
    bram_bits_moved: int
    energy_proxy: float


def resource_report(model: NetworkGraph,
                    geometries: dict[str, PeArrayGeometry] | None = None,
                    timing: TimingConfig | None = None,
                    bram_cfg: BramConfig | None = None,
                    energy: EnergyWeights | None = None) -> ResourceReport:
    """Count MAC units, resident bits, and per-image operations.

    Multiplier-class units come from the DSP-backed arrays (encoding, 1x1
    residual, FC); the binary main path contributes spike-gated adders.
    Op counts assume the dense per-layer sweeps of the tile schedules.
    """
    geometries = geometries or default_geometries(model)
    timing = timing or TimingConfig()
    energy = energy or EnergyWeights()
    machine = SimMachine(model, bram_cfg)  # occupancy check happens here

    per_layer_units: dict[str, int] = {}
    per_layer_mult: dict[str, int] = {}
    mac_ops = 0
    gated_add_ops = 0
    bits_moved = 0

    cfg = model.config
    hw = (cfg.input_hw, cfg.input_hw)
    extents = _layer_input_extents(model, hw)
    for layer in model.conv_layers():
        geom = geometries[layer.name]
        per_layer_units[layer.name] = geom.units
        per_layer_mult[layer.name] = geom.units if geom.uses_multipliers else 0
        schedule = tile_layer(layer, geom, in_hw=extents[layer.name])
        positions = schedule.tiles[0].positions
        ops = schedule.invocations * positions * geom.units
        if geom.uses_multipliers:
            mac_ops += ops
        else:
            gated_add_ops += ops
        in_h, in_w = extents[layer.name]
        padded_positions = (in_h + 2 * layer.padding) * (in_w + 2 * layer.padding)
        value_bits = model.input_params.bits if layer.is_encoding else 1
        for tile in schedule.tiles:
            bits_moved += tile.out_size * tile.in_size * layer.kernel ** 2 * 8
            bits_moved += tile.in_size * padded_positions * value_bits
            if tile.pass_index == schedule.passes_per_tile:
                bits_moved += tile.out_size * positions

    fc_units = timing.fc_macs_per_cycle
    per_layer_units["fc"] = fc_units
    per_layer_mult["fc"] = fc_units
    fc_ops = model.fc.weight_count
    mac_ops += fc_ops
    bits_moved += model.fc.weight_count * model.fc.weights.params.bits
    pool_elems = model.pool.channels * (extents["pool"][0] * extents["pool"][1])
    gated_add_ops += pool_elems
    bits_moved += pool_elems

    total_mult = sum(per_layer_mult.values())
    total_units = sum(per_layer_units.values())
    proxy = (energy.mac_op * mac_ops + energy.gated_add_op * gated_add_ops
             + energy.bram_bit * bits_moved)
    return ResourceReport(
        per_layer_units=per_layer_units,
        per_layer_multiplier_units=per_layer_mult,
        total_units=total_units,
        total_multiplier_units=total_mult,
        total_adder_units=total_units - total_mult,
        weight_bits=machine.weight_bits,
        feature_bits=machine.feature_bits,
        occupancy_bits=machine.bram.occupancy_bits,
        capacity_bits=machine.bram.capacity_bits,
        mac_ops=mac_ops,
        gated_add_ops=gated_add_ops,
        bram_bits_moved=bits_moved,
        energy_proxy=proxy,
    )


def _layer_input_extents(model: NetworkGraph, input_hw: tuple[int, int]) -> dict[str, tuple[int, int]]:
    """Input spatial extent of every layer plus the pool, by name."""
    extents: dict[str, tuple[int, int]] = {model.encoding.name: input_hw}
    hw = model.encoding.out_hw(input_hw)
    for block in model.blocks:
        extents[block.conv_a.name] = hw
        mid = block.conv_a.out_hw(hw)
        extents[block.conv_b.name] = mid
        if block.shortcut is not None:
            extents[block.shortcut.name] = hw
        hw = block.conv_b.out_hw(mid)
    extents["pool"] = hw
    return extents
