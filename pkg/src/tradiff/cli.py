"""Command-line entry point.

Stage subcommands (``ingest``, ``extract``, ``fit``, ``evaluate``,
``report``, ``all``) run against a JSON config; ``run --stage X`` is the
flag-style equivalent. ``demo`` writes the bundled synthetic mini-corpus.

Exit codes: 0 success, 2 validation error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, TradiffError
from .minicorpus import make_mini_corpus
from .pipeline import STAGES, RunConfig, StageFailure, run_pipeline

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tradiff",
        description="Surprisal and attentional predictors of translation difficulty.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_args(p, with_stage=False):
        p.add_argument("--config", required=True, help="path to the run config JSON")
        p.add_argument("--out", help="run directory (defaults to the config's output path)")
        if with_stage:
            p.add_argument("--stage", required=True, choices=STAGES + ("all",))
        p.add_argument("--seed-override", type=int, default=None)
        p.add_argument("--jobs", type=int, default=None, help="worker threads")
        p.add_argument("--force", action="store_true", help="overwrite completed stages")

    for name in STAGES:
        add_run_args(sub.add_parser(name, help=f"run the {name} stage"))
    add_run_args(sub.add_parser("all", help="run every stage in order"))
    add_run_args(sub.add_parser("run", help="run one stage chosen by --stage"), with_stage=True)

    demo = sub.add_parser("demo", help="write the synthetic mini-corpus and its config")
    demo.add_argument("--out", required=True)
    demo.add_argument("--seed", type=int, default=2026)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "demo":
        config_path = make_mini_corpus(args.out, seed=args.seed)
        print(f"mini-corpus written; config at {config_path}")
        return EXIT_OK

    try:
        cfg = RunConfig.load(args.config)
        if args.seed_override is not None:
            cfg.seed = args.seed_override
        run_dir = args.out or cfg.output_dir
        if not run_dir:
            raise ConfigError("no run directory: set --out or the config's paths.output")
        if args.command == "all" or (args.command == "run" and args.stage == "all"):
            stages = STAGES
        elif args.command == "run":
            stages = (args.stage,)
        else:
            stages = (args.command,)
        run_pipeline(cfg, run_dir, stages=stages, jobs=args.jobs, force=args.force)
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ConfigError, TradiffError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    for stage in stages:
        print(f"stage {stage}: ok")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
