"""Command-line entry point: ``unicrop run`` and ``unicrop make-synthetic``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .errors import ConfigError
from .pipeline import EXIT_CONFIG, run_pipeline


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unicrop", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the full pipeline from a config file")
    run.add_argument("--config", required=True, help="key = value run configuration")
    run.add_argument("--select-k", type=int, help="number of mRMR features per fold")
    run.add_argument("--seed", type=int, help="cross-validation seed")
    run.add_argument("--criterion", type=str.lower, choices=("ratio", "difference"))
    run.add_argument("--offline", action="store_true", help="forbid the HTTP fetcher")
    run.add_argument("--no-resume", action="store_true", help="rerun every stage")

    syn = sub.add_parser("make-synthetic", help="write the synthetic benchmark inputs")
    syn.add_argument("directory")
    syn.add_argument("--fields", type=int, default=600)
    syn.add_argument("--seed", type=int, default=7)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "make-synthetic":
        from .synthetic import write_benchmark

        cfg_path = write_benchmark(args.directory, n_fields=args.fields, seed=args.seed)
        print(cfg_path)
        return 0

    overrides = {
        "select_k": args.select_k,
        "cv_seed": args.seed,
        "criterion": args.criterion.upper() if args.criterion else None,
        "offline": True if args.offline else None,
    }
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"stage=schema_config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outcome = run_pipeline(cfg, resume=not args.no_resume)
    if outcome.code:
        print(outcome.message, file=sys.stderr)
    else:
        stages = ", ".join(f"{k}={v}" for k, v in outcome.stages.items())
        print(f"ok: {stages}; artifacts in {cfg.output_dir}")
    return outcome.code


if __name__ == "__main__":
    sys.exit(main())
