"""
Command-line entry point for the grid minigame A3C trainer.

Usage:
    python -m app.main train --minigame beacon --arch baseline --workers 1 --seed 7
    python -m app.main eval --checkpoint runs/best.ckpt --minigame beacon --episodes 100
    python -m app.main transfer --source runs/beacon/best.ckpt --minigame shards
    python -m app.main compare --minigame shards --variants baseline,plusconv --seeds 0,1
    python -m app.main baselines --minigame beacon --episodes 1000
"""
from pathlib import Path
from typing import Dict, List, Optional
import argparse
import logging
import sys

from app.a3c.exceptions import TrainingError
from app.ckpt.exceptions import CheckpointError, IncompatibleCheckpointError
from app.cli.commands import (
    EXIT_INCOMPATIBLE,
    EXIT_RUNTIME,
    EXIT_USAGE,
    cmd_baselines,
    cmd_compare,
    cmd_eval,
    cmd_train,
    cmd_transfer,
)
from app.cli.exceptions import UsageError
from app.cli.schemas import RunConfig, parse_assignment, read_config_file
from app.config import EnvConfig, NetworkConfig

logger = logging.getLogger(__name__)

# Flag destination -> configuration key
RUN_FLAGS = {
    "minigame": "minigame",
    "arch": "arch",
    "seed": "seed",
    "output": "output",
    "workers": "workers",
    "episodes": "episodes",
    "resolution": "resolution",
}


def configure_logging(verbose: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )
    logging.getLogger().setLevel(level)


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="key=value configuration file ('#' starts a comment)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override one configuration key (repeatable)")
    parser.add_argument("--minigame", help=f"One of: {', '.join(EnvConfig.MINIGAMES)}")
    parser.add_argument("--arch", help=f"One of: {', '.join(NetworkConfig.VARIANTS)}")
    parser.add_argument("--workers", type=int, help="Concurrent actor-learners")
    parser.add_argument("--seed", type=int, help="Run seed")
    parser.add_argument("--episodes", type=int, help="Total episode budget")
    parser.add_argument("--resolution", type=int, help="Screen/minimap side length")
    parser.add_argument("--output", help="Run directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="app.main", description="A3C on grid minigames")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="Train a network on one minigame")
    _add_run_options(train)
    train.add_argument("--resume", type=Path, help="Continue from this checkpoint")

    transfer = commands.add_parser("transfer", help="Train starting from another run's checkpoint")
    _add_run_options(transfer)
    transfer.add_argument("--source", type=Path, required=True, help="Source checkpoint")

    compare = commands.add_parser("compare", help="Train several variants over several seeds")
    _add_run_options(compare)
    compare.add_argument("--variants", required=True, help="Comma-separated variants (at least two)")
    compare.add_argument("--seeds", default="0", help="Comma-separated seeds")

    evaluate = commands.add_parser("eval", help="Greedy evaluation of a checkpoint")
    evaluate.add_argument("--checkpoint", type=Path, required=True)
    evaluate.add_argument("--minigame", required=True)
    evaluate.add_argument("--episodes", type=int, default=100)
    evaluate.add_argument("--seed", type=int, default=0)
    evaluate.add_argument("--episode-cap", type=int, default=EnvConfig.EPISODE_CAP)
    evaluate.add_argument("--output", type=Path, help="Directory for eval.csv (default: checkpoint's directory)")
    evaluate.add_argument("--force", action="store_true", help="Evaluate on a minigame other than the training one")

    baselines = commands.add_parser("baselines", help="Random and oracle policy statistics")
    baselines.add_argument("--minigame", required=True)
    baselines.add_argument("--episodes", type=int, default=1000)
    baselines.add_argument("--seed", type=int, default=0)
    baselines.add_argument("--resolution", type=int, default=EnvConfig.RESOLUTION)
    baselines.add_argument("--episode-cap", type=int, default=EnvConfig.EPISODE_CAP)
    baselines.add_argument("--output", type=Path, default=Path("."), help="Directory for baselines.csv")
    return parser


def run_config(args: argparse.Namespace) -> RunConfig:
    """Config file, then explicit flags, then --set overrides."""
    settings: Dict[str, str] = {}
    if args.config is not None:
        settings.update(read_config_file(args.config))
    for dest, key in RUN_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            settings[key] = str(value)
    for assignment in args.overrides:
        key, value = parse_assignment(assignment)
        settings[key] = value
    return RunConfig.from_settings(settings)


def _int_list(text: str, flag: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated integers, got '{text}'") from None


def dispatch(args: argparse.Namespace) -> int:
    if args.command == "train":
        return cmd_train(run_config(args), resume=args.resume)
    if args.command == "transfer":
        return cmd_transfer(run_config(args), source=args.source)
    if args.command == "compare":
        variants = [v.strip() for v in args.variants.split(",") if v.strip()]
        return cmd_compare(run_config(args), variants, _int_list(args.seeds, "--seeds"))
    if args.command == "eval":
        return cmd_eval(args.checkpoint, args.minigame, args.episodes, args.seed,
                        output=args.output, force=args.force, episode_cap=args.episode_cap)
    if args.command == "baselines":
        return cmd_baselines(args.minigame, args.episodes, args.seed, args.output,
                             resolution=args.resolution, episode_cap=args.episode_cap)
    raise UsageError(f"Unknown command: {args.command}")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    configure_logging(args.verbose)
    try:
        return dispatch(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except IncompatibleCheckpointError as e:
        print(f"incompatible: {e}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except TrainingError as e:
        where = f" (partial log: {e.log_path})" if e.log_path else ""
        print(f"training failed: {e}{where}", file=sys.stderr)
        return EXIT_RUNTIME
    except (CheckpointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception(f"Unhandled exception: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
