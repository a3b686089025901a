"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import ConfigError, DataError, DivergenceError
from . import caption_log, pipeline
from .config import ExperimentConfig, load_config

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4

logger = logging.getLogger("topomia")


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--metric", action="append", choices=["rouge2", "embedding-cosine"], help="repeatable")
    p.add_argument("--tau", action="append", type=float, help="repeatable")
    p.add_argument("--granularity", action="append", type=int, help="repeatable")
    p.add_argument("--repeats", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topomia", description="Membership-inference audit of a toy captioner under topographic regularization."
    )
    parser.add_argument("--print-config", action="store_true", help="print the default config and exit")
    sub = parser.add_subparsers(dest="command")
    common = _global_flags()
    for name, help_text in (
        ("gen-data", "generate and export the synthetic dataset"),
        ("train", "train one toy model per tau"),
        ("caption", "caption members and non-members with every trained model"),
        ("score", "compute membership signals from caption logs"),
        ("attack", "run the threshold attack and granularity sweep"),
        ("report", "write tables, summary and plots"),
    ):
        sub.add_parser(name, parents=[common], help=help_text)
    run = sub.add_parser("run", parents=[common], help="run the full pipeline")
    run.add_argument(
        "--sweep-seed", action="append", type=int, metavar="SEED",
        help="repeatable; run once per seed under <out>/seed_<SEED> and write <out>/trend/",
    )
    ingest = sub.add_parser("ingest", parents=[common], help="validate an external caption log")
    ingest.add_argument("log", help="JSONL caption log")
    return parser


def _config_from_args(args) -> ExperimentConfig:
    return load_config(
        args.config,
        output_dir=args.out,
        master_seed=args.seed,
        metrics=args.metric,
        taus=args.tau,
        granularities=args.granularity,
        repeats=args.repeats,
    )


def _dispatch(args) -> None:
    config = _config_from_args(args)
    if args.command == "ingest":
        groups = pipeline.run_single_stage(config, "ingest", path=args.log)
        records = [r for recs in groups.values() for r in recs]
        counts = caption_log.label_counts(records)
        print(f"{len(records)} records: {counts['member']} members, {counts['non-member']} non-members")
        for (tag, tau), recs in groups.items():
            c = caption_log.label_counts(recs)
            print(f"  {tag} tau={tau:g}: {c['member']} members, {c['non-member']} non-members")
        return
    if args.command == "run":
        if args.sweep_seed:
            trend = pipeline.run_seed_sweep(config, args.sweep_seed)
            print(pipeline.format_trend(trend), end="")
            return
        pipeline.run_pipeline(config)
        print((Path(config.output_dir) / "report" / "table.txt").read_text(encoding="utf-8"), end="")
        return
    pipeline.run_single_stage(config, args.command)
    print(f"{args.command}: done ({config.output_dir})")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, pipeline.StageError):
        exc = exc.cause
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DivergenceError):
        return EXIT_DIVERGENCE
    if isinstance(exc, (DataError, OSError)):
        return EXIT_DATA
    raise exc


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        print(ExperimentConfig().to_yaml(), end="")
        return EXIT_OK
    if not args.command:
        parser.print_help()
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        _dispatch(args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        code = exit_code_for(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
