"""Report rendering: machine-parseable key-value blocks and the figures
written next to them.

Block format (schema ``snnaccel-report/1``): a ``schema`` line, then one
``[section]`` header per block followed by ``key = value`` lines and a
blank line. Keys never contain spaces; values are integers, floats
(repr'd, full precision), or strings. The format is append-only across
schema versions so downstream parsers can pin the version they expect.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .model import NetworkGraph, layer_param_counts
from .sim import PipelineReport, ResourceReport

SCHEMA = "snnaccel-report/1"

# Keep saved images free of environment-dependent metadata so identical
# runs produce identical bytes.
_PNG_META = {"Software": None}


def render_report(blocks: dict[str, dict]) -> str:
    lines = [f"schema = {SCHEMA}", ""]
    for section, entries in blocks.items():
        lines.append(f"[{section}]")
        for key, value in entries.items():
            lines.append(f"{key} = {_fmt(value)}")
        lines.append("")
    return "\n".join(lines)


def parse_report(text: str) -> dict[str, dict]:
    """Inverse of render_report for tests and downstream tooling."""
    blocks: dict[str, dict] = {}
    section = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1]
            blocks[section] = {}
            continue
        key, _, value = line.partition(" = ")
        if section is None:
            if key == "schema":
                continue
            raise ValueError(f"entry before any section: {raw!r}")
        blocks[section][key] = _parse_value(value)
    return blocks


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def param_count_block(graph: NetworkGraph) -> dict:
    from .model import count_params

    entries = {f"layer.{name}": count for name, count in layer_param_counts(graph).items()}
    entries["total.weights"] = count_params(graph)
    entries["total.weights_and_biases"] = count_params(graph, include_bias=True)
    entries["groups"] = graph.config.groups
    return entries


def pipeline_block(report: PipelineReport) -> dict:
    entries = {
        "clock_hz": report.clock_hz,
        "n_images": report.n_images,
    }
    for name, cycles in report.stage_cycles.items():
        entries[f"stage.{name}.cycles"] = cycles
    entries.update({
        "latency_cycles": report.latency_cycles,
        "latency_ms": report.latency_ms,
        "initiation_interval_cycles": report.ii_cycles,
        "total_cycles": report.total_cycles,
        "fps_ii": report.fps_ii,
        "fps_latency": report.fps_latency,
    })
    for name, frac in report.stage_occupancy.items():
        entries[f"occupancy.{name}"] = frac
    return entries


def resource_block(report: ResourceReport) -> dict:
    entries = {}
    for name, units in report.per_layer_units.items():
        entries[f"units.{name}"] = units
    entries.update({
        "total_units": report.total_units,
        "total_multiplier_units": report.total_multiplier_units,
        "total_adder_units": report.total_adder_units,
        "weight_bits": report.weight_bits,
        "feature_bits": report.feature_bits,
        "occupancy_bits": report.occupancy_bits,
        "capacity_bits": report.capacity_bits,
        "mac_ops": report.mac_ops,
        "gated_add_ops": report.gated_add_ops,
        "bram_bits_moved": report.bram_bits_moved,
        "energy_proxy": report.energy_proxy,
    })
    return entries


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def save_param_count_figure(counts_by_variant: dict[str, dict[str, int]], path) -> None:
    """Grouped bar chart of per-layer weight counts, one bar group per
    layer and one color per variant (e.g. grouped vs standard conv)."""
    variants = list(counts_by_variant)
    layers = list(next(iter(counts_by_variant.values())))
    fig, ax = plt.subplots(figsize=(9, 4))
    width = 0.8 / max(len(variants), 1)
    for i, variant in enumerate(variants):
        counts = counts_by_variant[variant]
        xs = [j + i * width for j in range(len(layers))]
        ax.bar(xs, [counts[l] for l in layers], width=width, label=variant)
    ax.set_xticks([j + width * (len(variants) - 1) / 2 for j in range(len(layers))])
    ax.set_xticklabels(layers, rotation=45, ha="right")
    ax.set_ylabel("weights")
    ax.set_title("Per-layer weight counts")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def save_stage_cycles_figure(report: PipelineReport, path) -> None:
    names = list(report.stage_cycles)
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.bar(range(len(names)), [report.stage_cycles[n] for n in names])
    ax.axhline(report.ii_cycles, linestyle="--", linewidth=1, color="tab:red",
               label=f"initiation interval = {report.ii_cycles}")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_ylabel("cycles")
    ax.set_title("Pipeline stage cycles per image")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def save_occupancy_figure(report: PipelineReport, path) -> None:
    occ = report.stage_occupancy
    names = list(occ)
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.bar(range(len(names)), [occ[n] for n in names])
    ax.set_ylim(0, 1.05)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_ylabel("fraction of initiation interval")
    ax.set_title("Stage occupancy")
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def save_energy_figure(report: ResourceReport, path, weights=None) -> None:
    from .sim import EnergyWeights

    weights = weights or EnergyWeights()
    parts = {
        "multiplier MACs": report.mac_ops * weights.mac_op,
        "spike-gated adds": report.gated_add_ops * weights.gated_add_op,
        "BRAM traffic": report.bram_bits_moved * weights.bram_bit,
    }
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(parts)), list(parts.values()))
    ax.set_xticks(range(len(parts)))
    ax.set_xticklabels(list(parts), rotation=20, ha="right")
    ax.set_ylabel("weighted op count")
    ax.set_title("Energy proxy breakdown")
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
