"""Command-line entry point.

    relopts <stage> --config PATH|preset:NAME --out DIR [--seed N] [options]

Stages: collect, train-metric, train-fermat, discover, train-options,
evaluate, sweep-options, plot, verify. Exit codes: 0 success, 2 validation
error (bad config, stale/corrupt artifact), 3 missing upstream artifact.
"""

from __future__ import annotations

import argparse
import sys

from .artifacts import is_missing
from .config import format_config, load_config
from .errors import ArtifactError, ConfigError, RelOptsError
from . import pipeline

STAGES = {
    "collect": pipeline.stage_collect,
    "train-metric": pipeline.stage_train_metric,
    "train-fermat": pipeline.stage_train_fermat,
    "discover": pipeline.stage_discover,
    "train-options": pipeline.stage_train_options,
    "evaluate": pipeline.stage_evaluate,
    "sweep-options": pipeline.stage_sweep_options,
    "plot": pipeline.stage_plot,
    "verify": pipeline.stage_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relopts", description=__doc__)
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in STAGES:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help="config file path or preset:<name>")
        p.add_argument("--out", required=True, help="artifact directory")
        p.add_argument("--seed", type=int, default=0)
        if name == "evaluate":
            p.add_argument("--options", type=int, default=None,
                           help="use only the first N options (default: all)")
        if name == "sweep-options":
            p.add_argument("--counts", type=str, default=None,
                           help="comma list of option counts (default 0,2,all)")
    show = sub.add_parser("show-config")
    show.add_argument("--config", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.stage == "show-config":
            sys.stdout.write(format_config(cfg))
            return 0
        if args.stage == "evaluate":
            result = pipeline.stage_evaluate(cfg, args.seed, args.out,
                                             option_count=args.options)
        elif args.stage == "sweep-options":
            counts = None
            if args.counts:
                counts = [int(c) for c in args.counts.split(",")]
            result = pipeline.stage_sweep_options(cfg, args.seed, args.out, counts=counts)
        elif args.stage == "verify":
            failures = pipeline.stage_verify(cfg, args.seed, args.out)
            for f in failures:
                print(f"FAIL {f}")
            if failures:
                return 1
            print("verify: all checks passed")
            return 0
        else:
            result = STAGES[args.stage](cfg, args.seed, args.out)
        print(f"{args.stage}: ok ({result if isinstance(result, str) else 'done'})")
        return 0
    except ArtifactError as exc:
        if is_missing(exc):
            print(f"{args.stage}: missing upstream artifact -> {exc}", file=sys.stderr)
            return 3
        print(f"{args.stage}: artifact error -> {exc}", file=sys.stderr)
        return 2
    except (ConfigError, RelOptsError) as exc:
        print(f"{args.stage}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
