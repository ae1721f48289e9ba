"""Command-line entry point: run trainings and average score files."""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from .config import SchemaError, load_config
from .trainer import average_runs, train


def build_parser():
    parser = argparse.ArgumentParser(
        prog="deskrl",
        description="Train configuration-driven RL agents and average runs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one or more seeded trainings")
    p_train.add_argument("--config", required=True, help="path to the run .json")
    p_train.add_argument("--runs", type=int, default=None,
                         help="number of runs (seeds seed, seed+1, ...)")
    p_train.add_argument("--seed", type=int, default=None, help="base seed")
    p_train.add_argument("--out", default=None, help="output directory")
    p_train.add_argument("--parallel-runs", action="store_true",
                         help="execute the runs concurrently")

    p_avg = sub.add_parser("average", help="average existing score files")
    p_avg.add_argument("files", nargs="+", help="score files to average")
    p_avg.add_argument("--out", required=True, help="averaged output path")
    p_avg.add_argument("--grid-points", type=int, default=200)
    p_avg.add_argument("--window", type=int, default=20)
    return parser


def cmd_train(args):
    config = load_config(args.config)
    if args.seed is not None:
        config.run._data["seed"] = int(args.seed)
    if args.runs is not None:
        if args.runs < 1:
            raise SchemaError("--runs must be >= 1")
        config.run._data["n_runs"] = int(args.runs)
    if args.out is not None:
        config.run._data["output_dir"] = args.out

    n_runs = int(config.run.get("n_runs"))
    base_seed = int(config.run.get("seed"))
    configs = [config.with_seed(base_seed + i) for i in range(n_runs)]
    if args.parallel_runs and n_runs > 1:
        with ThreadPoolExecutor(max_workers=n_runs) as pool:
            results = list(pool.map(train, configs))
    else:
        results = [train(cfg) for cfg in configs]

    for result in results:
        print(result.score_path)
    if n_runs > 1:
        avg_path = os.path.join(config.run.get("output_dir"),
                                f"{config.name}_avg.dat")
        average_runs([r.score_path for r in results], out_path=avg_path)
        print(avg_path)
    return 0


def cmd_average(args):
    for path in args.files:
        if not os.path.isfile(path):
            raise OSError(f"cannot read score file: {path}")
    average_runs(args.files, grid_points=args.grid_points,
                 window=args.window, out_path=args.out)
    print(args.out)
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(args)
        return cmd_average(args)
    except (SchemaError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
