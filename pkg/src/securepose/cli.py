"""
Command-line interface for securepose.

Each subcommand runs one pipeline stage against a run directory. Stages
read what earlier stages wrote, so a full run is:

    securepose simulate && securepose train-pose && securepose train-detector
    securepose detect && securepose localize && securepose eval
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any

from securepose import __version__
from securepose.config import ConfigError, PipelineConfig, apply_overrides, load_config
from securepose.dataset import Manifest
from securepose.detector import FORGED
from securepose.pipeline import STAGES, DecisionRow, run_paths, run_pipeline

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="securepose",
        description="Detect and localize surveillance-video forgeries with Wi-Fi CSI",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  securepose simulate --gops 40 --people 2   # Small synthetic dataset in ./runs/default
  securepose train-pose --epochs 5           # Fit the CSI-to-pose network
  securepose detect -o runs/exp1             # Score test GOPs of another run
  securepose eval -c configs/small.json      # Metrics with a JSON config
        """,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    helps = {
        "simulate": "Synthesize scenes, CSI traces and forged GOPs",
        "train-pose": "Train the CSI-to-pose network on authentic GOPs",
        "train-detector": "Train the forgery detector on compacted JHMs",
        "detect": "Score the test split and write decisions.csv",
        "localize": "Find abnormal poses in GOPs flagged as forged",
        "eval": "Compute detection and localization metrics",
        "bench": "Time each stage per GOP",
    }
    for name in STAGES:
        cmd = sub.add_parser(name, help=helps.get(name, name))
        _add_common(cmd)
    return parser


def _add_common(cmd: argparse.ArgumentParser) -> None:
    cmd.add_argument(
        "-c",
        "--config",
        type=Path,
        default=None,
        help="JSON config file (defaults are used for missing keys)",
    )
    cmd.add_argument(
        "-o",
        "--out",
        type=str,
        default=None,
        help="Run directory (default: runs/default)",
    )
    cmd.add_argument("--seed", type=int, default=None, help="Master seed")
    cmd.add_argument("--people", type=int, default=None, help="People per scene (0-4)")
    cmd.add_argument("--gops", type=int, default=None, help="Number of GOPs to simulate")
    cmd.add_argument(
        "--epochs",
        type=int,
        default=None,
        help="Training epochs for the network this command trains",
    )
    cmd.add_argument(
        "-j",
        "--workers",
        type=int,
        default=None,
        help="Worker threads for per-GOP stages",
    )
    cmd.add_argument("--previews", action="store_true", help="Write PNG previews (localize)")
    verbosity = cmd.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings only")


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    overrides: dict[str, Any] = {
        "seed": args.seed,
        "out_dir": args.out,
        "sim.people": args.people,
        "sim.num_gops": args.gops,
        "workers": args.workers,
    }
    if args.epochs is not None:
        key = "detector_train.epochs" if args.command == "train-detector" else "pose_train.epochs"
        overrides[key] = args.epochs
    if args.previews:
        overrides["eval.previews"] = True
    return apply_overrides(load_config(args.config), overrides)


def _summarize(command: str, result: Any, cfg: PipelineConfig) -> str:
    paths = run_paths(cfg)
    if isinstance(result, Manifest):
        return f"Simulated {len(result)} GOPs into {paths.dataset}"
    if command == "train-pose":
        return f"Saved pose model to {paths.pose_model}"
    if command == "train-detector":
        return f"Saved detector to {paths.detector_model}"
    if command == "detect":
        rows: list[DecisionRow] = result
        flagged = sum(r.label == FORGED for r in rows)
        return f"Flagged {flagged}/{len(rows)} GOPs as forged -> {paths.decisions}"
    if command == "localize":
        poses = sum(r.num_abnormal for r in result)
        return f"Localized {poses} abnormal pose(s) in {len(result)} GOP(s) -> {paths.localization}"
    if command == "eval":
        det = result["detection"]
        return (
            f"accuracy={det['accuracy']} tpr={det['tpr']} fpr={det['fpr']} "
            f"auroc={result['auroc']} -> {paths.metrics}"
        )
    if command == "bench":
        total = result["perGopMs"]["total"]
        return f"{total:.1f} ms per GOP (real time: {result['realTime']}) -> {paths.bench}"
    return f"{command} done"


def main(argv: list[str] | None = None) -> None:
    """Entry point for the `securepose` console script."""
    parser = build_parser()
    args = parser.parse_args(argv)

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        cfg = config_from_args(args)
        result = run_pipeline(args.command, cfg)
    except (ConfigError, ValueError, FileNotFoundError, OSError) as e:
        print(f"ERROR: {e}", file=sys.stderr)
        sys.exit(1)

    if not args.quiet:
        print(_summarize(args.command, result, cfg))


if __name__ == "__main__":
    main()
