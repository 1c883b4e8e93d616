"""Write the toy-DiT fixture set: graph.json, weights.bin and calib.bin."""

from __future__ import annotations

import argparse
from pathlib import Path
from typing import Dict, Sequence

import numpy as np

from segquant.container import write_container
from segquant.graphir import save_graph
from segquant.harness import CALIB_KEY, NoiseSchedule, ToyModelSpec, build_toy_dit, calibration_set
from segquant.numerics import Rng

DEFAULT_OUTPUT = Path("fixtures/toy_dit")


def write_fixtures(
    out_dir: Path,
    spec: ToyModelSpec = ToyModelSpec(),
    *,
    steps: int = 10,
    samples: int = 8,
) -> Dict[str, Path]:
    """Generate the fixture files under *out_dir* and return their paths."""

    target = Path(out_dir)
    graph = build_toy_dit(spec)
    paths = {
        "graph": target / "graph.json",
        "weights": target / "weights.bin",
        "calib": target / "calib.bin",
    }
    save_graph(graph, paths["graph"], paths["weights"])
    bindings = calibration_set(spec, NoiseSchedule.linear(steps), samples, Rng(spec.seed).spawn(CALIB_KEY))
    tensors: Dict[str, np.ndarray] = {}
    for index, binding in enumerate(bindings):
        for name, tensor in binding.items():
            tensors[f"s{index:03d}/{name}"] = tensor
    write_container(paths["calib"], tensors)
    return paths


def _parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--output",
        "-o",
        type=Path,
        default=DEFAULT_OUTPUT,
        help=f"Destination directory (default: {DEFAULT_OUTPUT})",
    )
    parser.add_argument("--seed", type=int, default=0, help="Weight and calibration seed (default: 0)")
    parser.add_argument("--hidden", type=int, default=12, help="Hidden width (default: 12)")
    parser.add_argument("--tokens", type=int, default=4, help="Latent rows per sample (default: 4)")
    parser.add_argument("--blocks", type=int, default=1, help="Block count (default: 1)")
    parser.add_argument("--samples", type=int, default=8, help="Calibration samples (default: 8)")
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parse_args(argv)
    spec = ToyModelSpec(hidden=args.hidden, tokens=args.tokens, seed=args.seed, blocks=args.blocks)
    for path in write_fixtures(args.output, spec, samples=args.samples).values():
        print(path)
    return 0


if __name__ == "__main__":  # pragma: no cover - CLI entry point
    raise SystemExit(main())
