"""Command-line entry point.

    lgesynthlab <stage|all> --config <path> --seed <int> --out <dir> [--deterministic]

Exit codes: 0 success, 2 precondition failure, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import os
import sys

import torch

from .pipeline import STAGES, ExperimentConfig, run_all, run_stage


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lgesynthlab",
                                     description="Scar-synthesis experiment pipeline")
    parser.add_argument("stage", choices=list(STAGES) + ["all"])
    parser.add_argument("--config", help="JSON experiment config", default=None)
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", default=None, help="override output root")
    parser.add_argument("--deterministic", action="store_true",
                        help="single-threaded, fixed reduction order")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = int(os.environ.get("LGESYNTHLAB_THREADS", "0"))
    if args.deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    elif threads > 0:
        torch.set_num_threads(threads)

    config = (ExperimentConfig.from_json(args.config) if args.config
              else ExperimentConfig())
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.out_root = args.out

    try:
        if args.stage == "all":
            entries = run_all(config)
        else:
            entries = [run_stage(args.stage, config)]
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    for e in entries:
        print(f"{e.stage}: inputs={e.inputs_hash[:12]} outputs={e.outputs_hash[:12]} "
              f"wall={e.wall_time:.1f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
