"""Command-line entry point.

Subcommands:
    param-count        per-layer and total weight counts for a channel plan
    make-random-model  seeded random model (quantized, or float with BN)
    fuse               fold batch norm into conv weights of a float model
    quantize           quantize a float model into the integer format
    infer              classify images with the reference engine
    simulate           run the accelerator simulator, print timing/resources
    report             write the full report plus figures to a directory

Exit codes: 0 success, 1 data/model errors, 2 usage errors. A JSON config
file (--config, or the SNNACCEL_CONFIG environment variable) can override
clock frequency and any TimingConfig field.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import reporting
from .engine import infer
from .errors import SnnAccelError
from .model import NetworkConfig, build_resnet10, count_params, layer_param_counts
from .modelio import (
    Cifar10Set,
    load_cifar10,
    load_model_file,
    save_model_file,
)
from .prepare import (
    FloatNetwork,
    fuse_network,
    quantize_network,
    random_float_network,
)
from .sim import (
    EnergyWeights,
    TimingConfig,
    resource_report,
    simulate_network,
    simulate_pipeline,
)

CONFIG_ENV_VAR = "SNNACCEL_CONFIG"
DEFAULT_CLOCK_HZ = 100e6


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings for one invocation."""

    clock_hz: float = DEFAULT_CLOCK_HZ
    weight_bits: int = 8
    groups: int = 4
    timing: TimingConfig = TimingConfig()
    energy: EnergyWeights = EnergyWeights()
    seed: int = 0

    def __post_init__(self):
        if self.clock_hz <= 0:
            raise SnnAccelError("clock frequency must be positive")
        if not 2 <= self.weight_bits <= 16:
            raise SnnAccelError("weight bits must be in [2, 16]")


def load_run_config(args) -> RunConfig:
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV_VAR)
    overrides = {}
    timing_overrides = {}
    energy_overrides = {}
    if path:
        try:
            payload = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise SnnAccelError(f"cannot read config {path}: {exc}") from exc
        timing_overrides = payload.pop("timing", {})
        energy_overrides = payload.pop("energy", {})
        known = {f.name for f in fields(RunConfig)}
        unknown = set(payload) - known
        if unknown:
            raise SnnAccelError(f"unknown config keys: {sorted(unknown)}")
        overrides = payload
    cfg = RunConfig(**overrides)
    if timing_overrides:
        cfg = replace(cfg, timing=replace(cfg.timing, **timing_overrides))
    if energy_overrides:
        cfg = replace(cfg, energy=replace(cfg.energy, **energy_overrides))
    if getattr(args, "clock", None) is not None:
        cfg = replace(cfg, clock_hz=args.clock)
    if getattr(args, "bits", None) is not None:
        cfg = replace(cfg, weight_bits=args.bits)
    if getattr(args, "groups", None) is not None:
        cfg = replace(cfg, groups=args.groups)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _network_config(args, run: RunConfig) -> NetworkConfig:
    return NetworkConfig(
        base_channels=getattr(args, "base_channels", 128),
        groups=run.groups,
        weight_bits=run.weight_bits,
        input_hw=getattr(args, "input_hw", 32),
    )


def _load_images(path: str, limit: int | None) -> Cifar10Set:
    ds = load_cifar10(path)
    if limit is not None and limit < len(ds):
        ds = Cifar10Set(labels=ds.labels[:limit], images=ds.images[:limit])
    return ds


def _require_quantized(model, path: str):
    if isinstance(model, FloatNetwork):
        raise SnnAccelError(
            f"{path} holds a float model; run `snnaccel quantize` on it first"
        )
    return model


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_param_count(args) -> int:
    run = load_run_config(args)
    graph = build_resnet10(_network_config(args, run))
    if args.table:
        counts = layer_param_counts(graph)
        width = max(len(n) for n in counts)
        print(f"{'layer':<{width}}  {'weights':>9}")
        for name, n in counts.items():
            print(f"{name:<{width}}  {n:>9}")
        print(f"{'total':<{width}}  {count_params(graph):>9}")
    else:
        blocks = {"param-count": reporting.param_count_block(graph)}
        print(reporting.render_report(blocks), end="")
    total = count_params(graph)
    print(f"# total weights: {total} ({total / 1e6:.3f} M)", file=sys.stderr)
    return 0


def cmd_make_random_model(args) -> int:
    run = load_run_config(args)
    cfg = _network_config(args, run)
    net = random_float_network(cfg, seed=run.seed, with_bn=not args.no_bn)
    if not args.float:
        net = quantize_network(fuse_network(net))
    save_model_file(net, args.out)
    kind = "float" if args.float else "quantized"
    print(f"wrote {kind} model (seed {run.seed}) to {args.out}", file=sys.stderr)
    return 0


def cmd_fuse(args) -> int:
    model = load_model_file(args.model)
    if not isinstance(model, FloatNetwork):
        raise SnnAccelError(f"{args.model} is already quantized; nothing to fuse")
    save_model_file(fuse_network(model), args.out)
    print(f"wrote fused model to {args.out}", file=sys.stderr)
    return 0


def cmd_quantize(args) -> int:
    run = load_run_config(args)
    model = load_model_file(args.model)
    if not isinstance(model, FloatNetwork):
        raise SnnAccelError(f"{args.model} is already quantized")
    if not model.fused:
        print("model carries batch norm; fusing before quantization", file=sys.stderr)
        model = fuse_network(model)
    graph = quantize_network(model, bits=run.weight_bits)
    save_model_file(graph, args.out)
    print(f"wrote quantized model to {args.out}", file=sys.stderr)
    return 0


def cmd_infer(args) -> int:
    model = _require_quantized(load_model_file(args.model), args.model)
    ds = _load_images(args.images, args.limit)

    def classify(idx: int) -> tuple[int, int]:
        return idx, infer(ds.images[idx], model).label

    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(classify, range(len(ds))))
    else:
        results = [classify(i) for i in range(len(ds))]

    lines = ["index,predicted,label"]
    correct = 0
    for idx, label in results:
        truth = int(ds.labels[idx])
        correct += int(label == truth)
        lines.append(f"{idx},{label},{truth}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    print(f"# accuracy vs stored labels: {correct}/{len(ds)}", file=sys.stderr)
    return 0


def cmd_simulate(args) -> int:
    run = load_run_config(args)
    model = _require_quantized(load_model_file(args.model), args.model)
    pipeline = simulate_pipeline(model, n_images=args.n_images, timing=run.timing,
                                 clock_hz=run.clock_hz)
    resources = resource_report(model, timing=run.timing, energy=run.energy)
    blocks = {
        "pipeline": reporting.pipeline_block(pipeline),
        "resources": reporting.resource_block(resources),
    }
    if args.images:
        ds = _load_images(args.images, args.limit)
        labels = {}
        for i in range(len(ds)):
            sim = simulate_network(ds.images[i], model, timing=run.timing)
            labels[f"image.{i}.label"] = sim.result.label
        blocks["labels"] = labels
    text = reporting.render_report(blocks)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return 0


def cmd_report(args) -> int:
    run = load_run_config(args)
    model = _require_quantized(load_model_file(args.model), args.model)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    pipeline = simulate_pipeline(model, n_images=args.n_images, timing=run.timing,
                                 clock_hz=run.clock_hz)
    resources = resource_report(model, timing=run.timing, energy=run.energy)
    blocks = {
        "param-count": reporting.param_count_block(model),
        "pipeline": reporting.pipeline_block(pipeline),
        "resources": reporting.resource_block(resources),
    }
    (out_dir / "report.txt").write_text(reporting.render_report(blocks))

    grouped = layer_param_counts(model)
    standard_cfg = replace(model.config, groups=1)
    standard = layer_param_counts(build_resnet10(standard_cfg))
    reporting.save_param_count_figure(
        {f"groups={model.config.groups}": grouped, "groups=1": standard},
        out_dir / "param_counts.png",
    )
    reporting.save_stage_cycles_figure(pipeline, out_dir / "stage_cycles.png")
    reporting.save_occupancy_figure(pipeline, out_dir / "stage_occupancy.png")
    reporting.save_energy_figure(resources, out_dir / "energy_proxy.png", run.energy)
    print(f"wrote report.txt and figures to {out_dir}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snnaccel",
        description="Fixed-point SNN golden model and accelerator simulator",
    )
    parser.add_argument("--config", help=f"JSON config path (or ${CONFIG_ENV_VAR})")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_model_arg(p):
        p.add_argument("--model", required=True, help="model file path")

    p = sub.add_parser("param-count", help="print per-layer weight counts")
    p.add_argument("--groups", type=int, default=None)
    p.add_argument("--base-channels", dest="base_channels", type=int, default=128)
    p.add_argument("--input-hw", dest="input_hw", type=int, default=32)
    p.add_argument("--table", action="store_true", help="human-readable table")
    p.set_defaults(handler=cmd_param_count)

    p = sub.add_parser("make-random-model", help="emit a seeded random model")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--groups", type=int, default=None)
    p.add_argument("--bits", type=int, default=None)
    p.add_argument("--base-channels", dest="base_channels", type=int, default=128)
    p.add_argument("--input-hw", dest="input_hw", type=int, default=32)
    p.add_argument("--float", action="store_true", help="emit an unquantized model")
    p.add_argument("--no-bn", action="store_true", help="omit batch-norm layers")
    p.set_defaults(handler=cmd_make_random_model)

    p = sub.add_parser("fuse", help="fold batch norm into a float model")
    add_model_arg(p)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_fuse)

    p = sub.add_parser("quantize", help="quantize a float model")
    add_model_arg(p)
    p.add_argument("--out", required=True)
    p.add_argument("--bits", type=int, default=None)
    p.set_defaults(handler=cmd_quantize)

    p = sub.add_parser("infer", help="classify images with the reference engine")
    add_model_arg(p)
    p.add_argument("--images", required=True, help="CIFAR-10 binary batch file")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None, help="write CSV here instead of stdout")
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("simulate", help="run the accelerator simulator")
    add_model_arg(p)
    p.add_argument("--images", default=None, help="optional batch to classify")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--clock", type=float, default=None, help="clock in Hz")
    p.add_argument("--n-images", dest="n_images", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("report", help="write report text and figures")
    add_model_arg(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--clock", type=float, default=None)
    p.add_argument("--n-images", dest="n_images", type=int, default=1)
    p.set_defaults(handler=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except SnnAccelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
