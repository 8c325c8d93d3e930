"""Command-line harness: run experiments, check configs, describe datasets."""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config, validate_config
from .runner import run_experiment
from .simulate import describe_datasets


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ldpfuse",
        description=(
            "Simulate multiple services collecting privately perturbed numerical"
            " data from one population and fuse the reports into mean and"
            " distribution estimates."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run all trials of an experiment config")
    run_p.add_argument("config", help="path to a TOML experiment file")
    run_p.add_argument("--seed", type=int, default=None, help="override the config seed")
    run_p.add_argument("--trials", type=int, default=None, help="override the trial count")
    run_p.add_argument("--out", default=None, help="override the output directory")

    val_p = sub.add_parser("validate", help="check a config without running it")
    val_p.add_argument("config", help="path to a TOML experiment file")

    ds_p = sub.add_parser("datasets", help="information about population sources")
    ds_sub = ds_p.add_subparsers(dest="action", required=True)
    ds_sub.add_parser("describe", help="list the built-in population sources")

    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    problems = validate_config(cfg)
    if problems:
        for p in problems:
            print(f"invalid config: {p}", file=sys.stderr)
        return 1
    result = run_experiment(cfg, seed=args.seed, trials=args.trials, out=args.out)
    width = max((len(est) for est, *_ in result.summary), default=8)
    print(f"scenario {result.label} ({result.eps_label})")
    for est, metric, value, count in result.summary:
        print(f"  {est:<{width}}  {metric:>8}  {value:.6g}  ({count} trials)")
    for name, path in sorted(result.paths.items()):
        print(f"wrote {name}: {path}")
    return 0


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    problems = validate_config(cfg)
    if problems:
        for p in problems:
            print(f"invalid config: {p}", file=sys.stderr)
        return 1
    print(f"{args.config}: ok")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "datasets":
            print(describe_datasets())
            return 0
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
