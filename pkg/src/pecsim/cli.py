"""``pecsim`` command line: run pipeline stages from a YAML config.

Exit codes: 0 success, 2 configuration error, 3 stage failure,
4 a configured threshold was violated.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import CONFIG_PATH_ENV, STAGES, ConfigError, PipelineConfig, find_config, load_config, preset_names
from .pipeline import StageError, check_thresholds, order_stages, run_stage, write_metadata, write_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_THRESHOLD = 4

# subcommand -> stage it runs
SUBCOMMANDS = {
    "characterize": "gst",
    "decompose": "qpd",
    "rb": "rb-raw",
    "mitigate-rb": "rb-mitigated",
    "validate": "validate",
    "sweep-crosstalk": "crosstalk-sweep",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"pipeline YAML (default: pecsim.yaml on ${CONFIG_PATH_ENV}, then the working directory)")
    common.add_argument("--seed", type=int, help="master seed, overrides the config")
    common.add_argument("--output", help="output directory, overrides the config")
    common.add_argument("--shots", type=int, help="shots per setting/sequence for every stage")
    common.add_argument("--circuits", type=int, help="sampled circuits per mitigated sequence")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pecsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"pecsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, stage in SUBCOMMANDS.items():
        sub.add_parser(name, parents=[common], help=f"run the {stage} stage")
    run = sub.add_parser("run", parents=[common], help="run the configured stages in dependency order, then the report")
    run.add_argument("--stage", action="append", choices=STAGES, help="run only this stage (repeatable)")
    sub.add_parser("report", parents=[common], help="summarize whatever stage outputs exist")
    sub.add_parser("presets", help="list the bundled device presets")
    return parser


def _configure(args) -> PipelineConfig:
    cfg = load_config(find_config(args.config))
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be a 64-bit non-negative integer")
        cfg.seed = args.seed
        cfg.device = cfg.device.replace(seed=args.seed)
    if args.output:
        cfg.output_dir = Path(args.output)
    if args.shots is not None:
        if args.shots < 1:
            raise ConfigError(f"--shots must be >= 1, got {args.shots}")
        for stage in ("gst", "rb-raw", "rb-mitigated", "validate"):
            cfg.budgets[stage]["shots"] = args.shots
    if args.circuits is not None:
        if args.circuits < 2:
            raise ConfigError(f"--circuits must be >= 2, got {args.circuits}")
        cfg.budgets["rb-mitigated"]["circuits"] = args.circuits
    return cfg


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "presets":
        print("\n".join(preset_names()))
        return EXIT_OK
    try:
        cfg = _configure(args)
    except ConfigError as exc:
        print(f"pecsim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "report":
        path = write_report(cfg.output_dir)
        print(path)
        return EXIT_OK
    stages = [SUBCOMMANDS[args.command]] if args.command in SUBCOMMANDS else order_stages(args.stage or cfg.stages)
    try:
        for stage in stages:
            summary = run_stage(cfg, stage)
            print(f"{stage}: {json.dumps(summary, sort_keys=True)}")
    except StageError as exc:
        print(f"pecsim: {exc}", file=sys.stderr)
        return EXIT_STAGE
    if args.command == "run":
        write_report(cfg.output_dir)
    write_metadata(cfg, stages, ["pecsim", *argv])
    failures = check_thresholds(cfg)
    if failures:
        for f in failures:
            print(f"pecsim: threshold failed: {f}", file=sys.stderr)
        return EXIT_THRESHOLD
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
