"""
Command implementations: train, eval, transfer, compare and baselines.

Each command takes a validated RunConfig (or explicit arguments), writes its
artifacts into the run directory and returns a process exit code.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence
import csv
import logging

import numpy as np

from app.a3c.evaluation import evaluate_scores
from app.a3c.schemas import TrainingLog
from app.a3c.trainer import InitialState, train
from app.ckpt.exceptions import IncompatibleCheckpointError
from app.ckpt.format import load
from app.ckpt.transfer import transfer_init
from app.cli.exceptions import UsageError
from app.cli.schemas import RunConfig, write_config_echo
from app.config import EnvConfig, ExperimentConfig, OutputConfig
from app.env.minigames import make_minigame
from app.env.policies import oracle_policy, random_policy, simulate
from app.env.types import ScoreStats

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_INCOMPATIBLE = 3


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _existing_best(output: Path) -> Optional[float]:
    best = output / OutputConfig.BEST_CHECKPOINT
    if not best.exists():
        return None
    _, metadata = load(best)
    return metadata.mean_score


def _print_stats(label: str, stats: ScoreStats) -> None:
    print(f"{label}: mean={stats.mean:.3f} std={stats.std:.3f} max={stats.max:.1f} episodes={stats.episodes}")


# ----------------------------------------------------------------------
# train / transfer
# ----------------------------------------------------------------------


def cmd_train(config: RunConfig, resume: Optional[Path] = None) -> int:
    """
    Train from scratch (or resume from a checkpoint) into config.output.

    Writes train_log.csv, checkpoints/, best.ckpt and config.echo.
    """
    output = config.output
    write_config_echo(config, output / OutputConfig.CONFIG_ECHO)

    initial = None
    if resume is not None:
        params, metadata = load(resume)
        if metadata.variant != config.arch or metadata.minigame != config.minigame:
            raise IncompatibleCheckpointError(
                f"Cannot resume a {metadata.variant}/{metadata.minigame} checkpoint as {config.arch}/{config.minigame}"
            )
        initial = InitialState.from_checkpoint(params, metadata, best_score=_existing_best(output))
        logger.info(f"Resuming from {resume} at episode {metadata.episodes}, T={metadata.global_step}")

    log = train(config.training, config.minigame, config.arch_spec, seed=config.seed,
                output_dir=output, initial=initial)
    print(f"Trained {len(log.records)} episodes, T={log.final_step}, "
          f"{log.steps_per_second:.1f} steps/s, best mean score {log.best_score}")
    return EXIT_OK


def cmd_transfer(config: RunConfig, source: Path) -> int:
    """Initialize from a source checkpoint, then train on config.minigame with a fresh optimizer."""
    seeded = transfer_init(source, config.minigame, config.arch_spec)
    output = config.output
    write_config_echo(config, output / OutputConfig.CONFIG_ECHO)
    log = train(
        config.training, config.minigame, config.arch_spec, seed=config.seed, output_dir=output,
        initial=InitialState(params=seeded.params), annotation=seeded.annotation,
    )
    print(f"Transfer run from {source}: {len(log.records)} episodes, best mean score {log.best_score}")
    return EXIT_OK


# ----------------------------------------------------------------------
# eval
# ----------------------------------------------------------------------


def cmd_eval(checkpoint: Path, minigame: str, episodes: int, seed: int,
             output: Optional[Path] = None, force: bool = False,
             episode_cap: int = EnvConfig.EPISODE_CAP) -> int:
    """Greedy evaluation of a checkpoint; prints statistics and writes eval.csv."""
    if episodes < 1:
        raise UsageError(f"--episodes must be positive, got {episodes}")
    if minigame not in EnvConfig.MINIGAMES:
        raise UsageError(f"unknown minigame '{minigame}'")

    params, metadata = load(checkpoint)
    if metadata.minigame != minigame and not force:
        raise IncompatibleCheckpointError(
            f"Checkpoint was trained on {metadata.minigame}, not {minigame} (use --force to evaluate anyway)"
        )

    seeds, scores = evaluate_scores(params, metadata.arch, minigame, episodes, seed, episode_cap)
    stats = ScoreStats.from_scores(scores)
    output = output if output is not None else Path(checkpoint).parent
    rows = [[index, s, repr(float(score))] for index, (s, score) in enumerate(zip(seeds, scores))]
    path = _write_csv(output / OutputConfig.EVAL_LOG, OutputConfig.EVAL_HEADER, rows)
    _print_stats(f"{minigame} ({metadata.variant})", stats)
    logger.info(f"Evaluation written to {path}")
    return EXIT_OK


# ----------------------------------------------------------------------
# baselines / compare
# ----------------------------------------------------------------------


def baseline_stats(minigame: str, episodes: int, seed: int, resolution: int = EnvConfig.RESOLUTION,
                   episode_cap: int = EnvConfig.EPISODE_CAP):
    """[(policy name, stats)] for the random policy and, where one exists, the oracle."""
    game = make_minigame(minigame, resolution, episode_cap)
    results = [("random", simulate(game, random_policy(seed), episodes, seed))]
    if minigame != "hunt":
        results.append(("oracle", simulate(game, oracle_policy(minigame), episodes, seed)))
    return results


def cmd_baselines(minigame: str, episodes: int, seed: int, output: Path,
                  resolution: int = EnvConfig.RESOLUTION, episode_cap: int = EnvConfig.EPISODE_CAP) -> int:
    """Print and record random and oracle score statistics."""
    if episodes < 1:
        raise UsageError(f"--episodes must be positive, got {episodes}")
    if minigame not in EnvConfig.MINIGAMES:
        raise UsageError(f"unknown minigame '{minigame}'")

    results = baseline_stats(minigame, episodes, seed, resolution, episode_cap)
    for name, stats in results:
        _print_stats(f"{minigame} {name}", stats)
    if minigame == "hunt":
        print("hunt has no oracle policy: its score depends on exploration")
    rows = [[name, repr(s.mean), repr(s.std), repr(s.max), s.episodes] for name, s in results]
    _write_csv(output / OutputConfig.BASELINES_LOG, OutputConfig.BASELINES_HEADER, rows)
    return EXIT_OK


def score_threshold(minigame: str, seed: int, resolution: int, episode_cap: int) -> float:
    """80% of the oracle mean; hunt uses a fixed absolute score."""
    if minigame == "hunt":
        return ExperimentConfig.HUNT_THRESHOLD
    game = make_minigame(minigame, resolution, episode_cap)
    stats = simulate(game, oracle_policy(minigame), ExperimentConfig.ORACLE_EPISODES, seed)
    return ExperimentConfig.THRESHOLD_FRACTION * stats.mean


def episodes_to_threshold(log: TrainingLog, threshold: float) -> Optional[int]:
    """Episodes completed at the first evaluation point whose mean reaches the threshold."""
    for point in log.evaluations:
        if point.mean_score >= threshold:
            return point.episode
    return None


@dataclass
class CompareRow:
    variant: str
    seed: int
    best_score: Optional[float]
    episodes_to_threshold: Optional[int]


def summarize(rows: List[CompareRow], minigame: str, threshold: float) -> str:
    """Variants ranked by median best score, one line each."""
    variants = sorted({row.variant for row in rows})
    summary = []
    for variant in variants:
        mine = [row for row in rows if row.variant == variant]
        best = [row.best_score for row in mine if row.best_score is not None]
        reached = [row.episodes_to_threshold for row in mine if row.episodes_to_threshold is not None]
        median_best = float(np.median(best)) if best else float("-inf")
        median_reach = float(np.median(reached)) if reached else None
        summary.append((median_best, variant, len(mine), median_reach))
    summary.sort(key=lambda item: (-item[0], item[1]))

    lines = [f"minigame: {minigame}   threshold: {threshold:.3f}",
             f"{'rank':<6}{'variant':<12}{'seeds':>6}{'median_best':>14}{'median_episodes':>18}"]
    for rank, (median_best, variant, seeds, median_reach) in enumerate(summary, start=1):
        reach = f"{median_reach:.0f}" if median_reach is not None else "-"
        best = f"{median_best:.3f}" if np.isfinite(median_best) else "-"
        lines.append(f"{rank:<6}{variant:<12}{seeds:>6}{best:>14}{reach:>18}")
    return "\n".join(lines) + "\n"


def cmd_compare(config: RunConfig, variants: Sequence[str], seeds: Sequence[int]) -> int:
    """Train every variant x seed on config.minigame and tabulate best scores and convergence."""
    if len(set(variants)) < 2:
        raise UsageError("compare needs at least two distinct variants")
    if not seeds:
        raise UsageError("compare needs at least one seed")

    training = config.training
    threshold = score_threshold(config.minigame, config.seed, training.resolution, training.episode_cap)
    rows: List[CompareRow] = []
    for variant in variants:
        for seed in seeds:
            run = config.with_overrides(arch=variant, seed=seed, output=config.output / f"{variant}-seed{seed}")
            write_config_echo(run, run.output / OutputConfig.CONFIG_ECHO)
            log = train(run.training, run.minigame, run.arch_spec, seed=seed, output_dir=run.output)
            rows.append(CompareRow(variant, seed, log.best_score, episodes_to_threshold(log, threshold)))
            logger.info(f"compare: {variant} seed {seed} best {log.best_score}")

    csv_rows = [
        [row.variant, row.seed,
         "" if row.best_score is None else repr(row.best_score),
         "" if row.episodes_to_threshold is None else row.episodes_to_threshold]
        for row in rows
    ]
    _write_csv(config.output / OutputConfig.COMPARE_LOG, OutputConfig.COMPARE_HEADER, csv_rows)
    summary = summarize(rows, config.minigame, threshold)
    (config.output / OutputConfig.COMPARE_SUMMARY).write_text(summary, encoding="utf-8")
    print(summary, end="")
    return EXIT_OK
