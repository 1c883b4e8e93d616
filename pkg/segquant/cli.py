"""``segquant`` command line: quantize, analyze and demo-ddpm."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ._version import project_version
from .bundle import REPORT_FILE, checked_report, dumps, save_bundle
from .calibstats import CalibStats, observe, polarity_table
from .config import EngineConfig, describe_keys, load_config
from .container import read_container
from .engine import capture_linear_inputs, quantize_model
from .errors import ArtifactIOError, MissingStatsError, SegQuantError
from .graphir import Graph, execute, load_graph
from .harness import run_demo, write_curve_csv
from .numerics import Tensor
from .seginfer import find_act_to_linear

LOGGER = logging.getLogger("segquant")

STATS_FILE = "stats.json"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def load_calibration(path: Path) -> List[Dict[str, Tensor]]:
    """Group ``<sample>/<input>`` tensors into input bindings, in file order."""

    samples: Dict[str, Dict[str, Tensor]] = {}
    for name, tensor in read_container(Path(path)).items():
        sample, sep, input_name = name.partition("/")
        if not sep or not input_name:
            raise MissingStatsError(f"{path}: calibration tensor {name!r} is not named <sample>/<input>")
        samples.setdefault(sample, {})[input_name] = tensor
    if not samples:
        raise MissingStatsError(f"{path}: calibration file holds no samples")
    return list(samples.values())


def _write_text(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}", code="io.write") from exc
    return path


def _config(args: argparse.Namespace) -> EngineConfig:
    return load_config(args.config, args.overrides or ())


def cmd_quantize(args: argparse.Namespace) -> int:
    cfg = _config(args)
    graph = load_graph(args.graph, args.weights, logger=LOGGER)
    calib = load_calibration(args.calib)
    model, report = quantize_model(graph, calib, cfg, logger=LOGGER)
    paths = save_bundle(model, report, args.out)
    for path in paths:
        print(path)
    return 0


def collect_activation_stats(g: Graph, calib: Sequence[Mapping[str, np.ndarray]]) -> Dict[str, CalibStats]:
    """Statistics at every activation node output, in topological order."""

    points = [node_id for node_id in g.topo_order() if g.node(node_id).kind == "activation"]
    stats = {point: CalibStats.empty(point, g.features(point)) for point in points}

    def observer(node_id: str, outputs: Tuple[Tensor, ...]) -> None:
        if node_id in stats:
            stats[node_id] = observe(stats[node_id], outputs[0])

    for sample in calib:
        execute(g, sample, observer=observer)
    return stats


def analyze(g: Graph, calib: Sequence[Mapping[str, np.ndarray]]) -> Dict[str, object]:
    """Polarity rows per activation point plus an amax summary per linear input."""

    activation_stats = collect_activation_stats(g, calib)
    eligible = {activation for activation, _ in find_act_to_linear(g)}
    rows = polarity_table(activation_stats, eligible=eligible)
    linear_stats = {}
    for layer, batches in capture_linear_inputs(g, calib).items():
        entry = CalibStats.empty(layer, g.linear_weight(layer).shape[0])
        for batch in batches:
            entry = observe(entry, batch)
        linear_stats[layer] = entry.to_dict()
    return {
        "version": project_version(),
        "samples": len(calib),
        "activations": [row.to_dict() for row in rows],
        "linear_inputs": linear_stats,
    }


def cmd_analyze(args: argparse.Namespace) -> int:
    graph = load_graph(args.graph, args.weights, logger=LOGGER)
    calib = load_calibration(args.calib)
    payload = analyze(graph, calib)
    print("point | channels, neg / pos | dualscale")
    for row in payload["activations"]:
        line = f"{row['channels']}, {row['neg_ratio']:.3f} / {row['pos_ratio']:.3f}"
        print(f"{row['point']} | {line} | {'yes' if row['dualscale'] else 'no'}")
    print("layer | amax")
    for layer, entry in payload["linear_inputs"].items():
        print(f"{layer} | {entry['amax']:.6g}")
    target = _write_text(Path(args.out) / STATS_FILE, dumps(payload))
    LOGGER.info("Wrote activation statistics | path=%s | points=%d", target, len(payload["activations"]))
    return 0


def cmd_demo_ddpm(args: argparse.Namespace) -> int:
    cfg = _config(args)
    result = run_demo(cfg, logger=LOGGER)
    out = Path(args.out)
    for name, curve in result.curves.items():
        print(write_curve_csv(out / f"{name}.csv", curve))
    print(_write_text(out / REPORT_FILE, dumps(checked_report(result.report))))
    return 0


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON engine configuration file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        metavar="KEY=VALUE",
        help="Override one config key (repeatable; value parsed as JSON)",
    )


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--graph", type=Path, required=True, help="graph.json describing the model")
    parser.add_argument("--weights", type=Path, required=True, help="weights.bin tensor container")
    parser.add_argument("--calib", type=Path, required=True, help="calibration container of <sample>/<input> tensors")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segquant",
        description="Segment-aware post-training quantization toolkit",
        epilog=describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {project_version()}")
    parser.add_argument("--log-level", default="INFO", choices=LOG_LEVELS, help="Logging verbosity (default: INFO)")
    subparsers = parser.add_subparsers(dest="command", required=True)

    quantize = subparsers.add_parser("quantize", help="Quantize a graph and write the output bundle")
    _add_model_flags(quantize)
    _add_config_flags(quantize)
    quantize.add_argument("--out", type=Path, required=True, help="Bundle output directory")
    quantize.set_defaults(handler=cmd_quantize)

    analyze_cmd = subparsers.add_parser("analyze", help="Activation polarity and amax statistics")
    _add_model_flags(analyze_cmd)
    analyze_cmd.add_argument("--out", type=Path, default=Path("."), help="Directory for stats.json (default: cwd)")
    analyze_cmd.set_defaults(handler=cmd_analyze)

    demo = subparsers.add_parser(
        "demo-ddpm",
        help="Toy DiT timestep-error experiment",
        epilog=describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    _add_config_flags(demo)
    demo.add_argument("--out", type=Path, required=True, help="Directory for curve CSVs and report.json")
    demo.set_defaults(handler=cmd_demo_ddpm)
    return parser


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except SegQuantError as exc:
        LOGGER.debug("Command failed", exc_info=True)
        print(f"segquant {args.command}: error [{exc.code}] {exc}", file=sys.stderr)
        return exc.exit_code


def main(argv: Optional[Sequence[str]] = None) -> int:
    return run_cli(argv)


if __name__ == "__main__":  # pragma: no cover - CLI entrypoint
    raise SystemExit(main())


__all__ = [
    "analyze",
    "build_parser",
    "cmd_analyze",
    "cmd_demo_ddpm",
    "cmd_quantize",
    "collect_activation_stats",
    "load_calibration",
    "main",
    "run_cli",
]
