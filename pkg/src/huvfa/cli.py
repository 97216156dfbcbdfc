"""Command line entry point: ``huvfa <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 missing artifact, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import MODES, ExperimentConfig, load_config

log = logging.getLogger("huvfa")

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _goal(text: str):
    try:
        x, y = (int(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected X,Y, got {text!r}") from exc
    return x, y


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="INI experiment config")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--workers", type=int, default=1, help="processes for per-goal work")

    parser = _Parser(prog="huvfa", description="Hierarchical UVFAs in Four Rooms")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train-horde", parents=[common], help="train the per-goal learners")
    p.add_argument("--mode", choices=MODES, help="pick the 25-goal or 15-goal defaults")

    p = sub.add_parser("build", parents=[common], help="decompose and regress a model")
    p.add_argument("--mode", choices=pipeline.BUILD_MODES, required=True)

    p = sub.add_parser("eval", parents=[common], help="greedy rollouts of one model")
    p.add_argument("--mode", choices=pipeline.BUILD_MODES, required=True)
    p.add_argument("--goals", choices=pipeline.GOAL_SETS, default="both")

    p = sub.add_parser("plot", parents=[common], help="SVG heatmaps and panels")
    p.add_argument("--mode", choices=pipeline.BUILD_MODES, required=True)
    p.add_argument("--goal", type=_goal, help="goal cell as X,Y (default: first training goal)")

    p = sub.add_parser("compare", parents=[common], help="ground truth vs every built model")
    p.add_argument("--goals", choices=pipeline.GOAL_SETS, default="both")
    return parser


def _config(args) -> tuple[ExperimentConfig, Path]:
    if args.config is not None:
        if not args.config.exists():
            raise pipeline.MissingArtifact(f"config file {args.config} not found")
        cfg = load_config(args.config)
    elif args.out is not None and args.command != "train-horde" \
            and (args.out / "config.ini").exists():
        # later stages reuse the config recorded by train-horde
        cfg = load_config(args.out / "config.ini")
    else:
        mode = getattr(args, "mode", None)
        cfg = ExperimentConfig.for_mode(mode if mode in MODES else "supervised")
    cfg = cfg.with_overrides(seed=args.seed)
    out = args.out if args.out is not None else Path(cfg.out)
    return cfg, out


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        cfg, out = _config(args)
    except UsageError as exc:
        print(f"huvfa: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except pipeline.MissingArtifact as exc:
        print(f"huvfa: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ValueError as exc:
        print(f"huvfa: invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "train-horde":
            horde = pipeline.train_horde(cfg, out, args.workers)
            log.info("trained %d learners into %s", len(horde), out / "horde")
        elif args.command == "build":
            model = pipeline.build(cfg, out, args.mode)
            log.info("built %s: errors %.4g / %.4g", args.mode,
                     model.omega.reconstruction_error_, model.u.reconstruction_error_)
        elif args.command == "eval":
            log.info("wrote %s", pipeline.evaluate(cfg, out, args.mode, args.goals))
        elif args.command == "plot":
            for path in pipeline.plot(cfg, out, args.mode, args.goal):
                log.info("wrote %s", path)
        elif args.command == "compare":
            log.info("wrote %s", pipeline.compare(cfg, out, args.goals, args.workers))
    except pipeline.MissingArtifact as exc:
        print(f"huvfa: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (pipeline.NumericFailure, FloatingPointError, ArithmeticError) as exc:
        print(f"huvfa: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"huvfa: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
