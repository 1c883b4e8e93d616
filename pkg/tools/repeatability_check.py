"""CLI for checking that segquant commands produce byte-identical outputs across runs."""

from __future__ import annotations

import argparse
import json
import tempfile
from hashlib import sha256
from pathlib import Path
from typing import Dict, List, Mapping, Sequence

from segquant.cli import run_cli
from tools.build_fixtures import write_fixtures

_DEFAULT_CONFIG = Path(__file__).resolve().parents[1] / "fixtures" / "configs" / "int8.json"


class RepeatabilityError(RuntimeError):
    """Raised when deterministic expectations are not met."""


def _parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description="Run a segquant command several times and compare SHA-256 digests of every output file.",
    )
    parser.add_argument(
        "--command",
        choices=("quantize", "demo-ddpm"),
        default="quantize",
        help="segquant command to repeat (default: quantize).",
    )
    parser.add_argument(
        "--fixture",
        type=Path,
        help="Directory holding graph.json, weights.bin and calib.bin (quantize only; generated when omitted).",
    )
    parser.add_argument("--config", type=Path, default=_DEFAULT_CONFIG, help="Engine configuration file.")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Config override forwarded to every run.",
    )
    parser.add_argument(
        "--repeat",
        type=int,
        default=2,
        help="Number of runs to compare (default: 2).",
    )
    parser.add_argument("--output", type=Path, help="Optional JSON file for the digest table.")
    parser.add_argument(
        "--fail-on-drift",
        action="store_true",
        help="Raise if any output file differs between runs.",
    )
    return parser.parse_args(argv)


def digest_tree(root: Path) -> Dict[str, str]:
    """SHA-256 per file, keyed by path relative to *root*."""

    return {
        path.relative_to(root).as_posix(): sha256(path.read_bytes()).hexdigest()
        for path in sorted(root.rglob("*"))
        if path.is_file()
    }


def _command_argv(args: argparse.Namespace, fixture: Path, out_dir: Path) -> List[str]:
    argv = ["--log-level", "WARNING", args.command]
    if args.command == "quantize":
        argv += [
            "--graph",
            str(fixture / "graph.json"),
            "--weights",
            str(fixture / "weights.bin"),
            "--calib",
            str(fixture / "calib.bin"),
        ]
    argv += ["--config", str(args.config), "--out", str(out_dir)]
    for item in args.overrides:
        argv += ["--set", item]
    return argv


def compare_runs(runs: Sequence[Mapping[str, str]]) -> Dict[str, bool]:
    """Per file: ``True`` when every run produced it with the same digest."""

    names = sorted({name for run in runs for name in run})
    return {name: len({run.get(name) for run in runs}) == 1 for name in names}


def run(argv: Sequence[str] | None = None) -> int:
    args = _parse_args(argv)
    if args.repeat < 2:
        raise SystemExit("--repeat must be at least 2")

    runs: List[Dict[str, str]] = []
    with tempfile.TemporaryDirectory(prefix="segquant-repeat-") as scratch:
        fixture = args.fixture
        if fixture is None:
            fixture = Path(scratch) / "fixture"
            write_fixtures(fixture)
        for index in range(args.repeat):
            out_dir = Path(scratch) / f"run{index}"
            code = run_cli(_command_argv(args, fixture, out_dir))
            if code != 0:
                raise RepeatabilityError(f"run {index} of {args.command} exited with {code}")
            runs.append(digest_tree(out_dir))

    matches = compare_runs(runs)
    payload = {"command": args.command, "repeat": args.repeat, "files": runs[0], "matches": matches}
    if args.output is not None:
        args.output.parent.mkdir(parents=True, exist_ok=True)
        args.output.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for name, match in matches.items():
        print(f"{'PASS' if match else 'FAIL'} {name} {runs[0].get(name, '-')}")

    if args.fail_on_drift and not all(matches.values()):
        raise RepeatabilityError("Non-deterministic outputs detected")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    return run(argv)


if __name__ == "__main__":  # pragma: no cover - CLI entrypoint
    raise SystemExit(run())
