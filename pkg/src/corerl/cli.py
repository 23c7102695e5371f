"""Command-line entry point: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import sys
import time

from .config import ConfigError, load_config
from .data import DatasetError
from .pipeline import STAGES, VARIANTS, MissingInputError, run_pipeline, run_stage

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="corerl", description="Offline RL with expert-guided reward relabeling.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "gen-data": "roll out the behaviour policy and write the offline dataset",
        "analyze-gap": "intra-cluster reward gap for each k in gap.k_list",
        "select-experts": "cluster states and mark the best transition of each cluster",
        "train-cvae": "train the contrastive CVAE on the labeled dataset",
        "relabel": "write the dataset with compensable rewards",
        "train-cql": "train CQL Q-networks (one per eval seed)",
        "evaluate": "greedy rollouts of the trained Q-networks",
        "pipeline": "run every stage in order, with a plain-CQL baseline",
    }
    for name in (*STAGES, "pipeline"):
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("config", help="path to a JSON pipeline config")
        p.add_argument("overrides", nargs="*", metavar="section.key=value",
                       help="override config values; values are parsed as JSON when possible")
        if name in ("train-cql", "evaluate"):
            p.add_argument("--variant", choices=(*VARIANTS, "both"), default="both",
                           help="core trains on relabeled rewards, baseline on the originals")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "pipeline":
            run_pipeline(cfg, log=lambda msg: print(msg, flush=True))
        else:
            kwargs = {}
            if getattr(args, "variant", "both") != "both":
                kwargs["variants"] = (args.variant,)
            start = time.perf_counter()
            outs = run_stage(args.command, cfg, **kwargs)
            print(f"[{args.command}] {time.perf_counter() - start:.1f}s -> "
                  f"{', '.join(p.name for p in outs)}")
    except MissingInputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, ValueError, OSError, ArithmeticError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
