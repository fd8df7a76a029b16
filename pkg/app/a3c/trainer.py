"""
A3C training loop: actor-learner workers around a shared store, plus the
supervisor that logs episodes, evaluates and retains checkpoints.
"""
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Deque, List, Optional
import csv
import json
import logging
import multiprocessing as mp
import queue
import signal
import time
import traceback

import numpy as np

from app.a3c.exceptions import TrainingError
from app.a3c.gradients import accumulate_gradients
from app.a3c.rollout import collect_rollout
from app.a3c.schemas import EpisodeRecord, EvaluationPoint, TrainConfig, TrainingLog
from app.a3c.shared import SharedStore, LocalCounter, apply_update, make_optimizer
from app.ckpt.format import CheckpointMetadata, save
from app.config import CheckpointConfig, OutputConfig
from app.env.minigames import make_minigame
from app.net.architecture import ArchitectureSpec, build
from app.net.network import PolicyNetwork
from app.numcore.tensor import ParameterSet

logger = logging.getLogger(__name__)

ClaimEpisode = Callable[[], Optional[int]]
Emit = Callable[[EpisodeRecord], None]
ShouldStop = Callable[[], bool]


@dataclass
class InitialState:
    """Where a run starts: fresh, resumed from a checkpoint, or seeded by transfer."""

    params: ParameterSet
    global_step: int = 0
    episodes: int = 0
    rng_state: Optional[dict] = None
    best_score: Optional[float] = None

    @classmethod
    def from_checkpoint(cls, params: ParameterSet, metadata: CheckpointMetadata,
                        best_score: Optional[float] = None) -> "InitialState":
        state = json.loads(metadata.rng_state or "{}")
        return cls(
            params=params,
            global_step=metadata.global_step,
            episodes=metadata.episodes,
            rng_state=state.get("state"),
            best_score=best_score,
        )


def worker_seed(seed: int, worker_id: int, workers: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed).spawn(workers)[worker_id]


class ActorLearner:
    """
    One worker: synchronize, collect a rollout, accumulate gradients, update.

    Owns a private minigame, local parameters and generator; the shared
    store is its only link to the other workers.
    """

    def __init__(self, worker_id: int, minigame: str, arch: ArchitectureSpec, config: TrainConfig,
                 shared: SharedStore, seed: int, rng_state: Optional[dict] = None, start_time: float = 0.0):
        self.worker_id = worker_id
        self.config = config
        self.shared = shared
        self.network = PolicyNetwork(arch)
        self.optimizer = make_optimizer(config)
        self.env = make_minigame(minigame, arch.obs_spec.resolution, config.episode_cap)
        self.rng = np.random.default_rng(worker_seed(seed, worker_id, config.workers))
        if rng_state is not None:
            self.rng.bit_generator.state = rng_state
        self.local = shared.snapshot()
        self.start_time = start_time
        self.steps = 0

    def _wallclock_ms(self) -> int:
        if not self.config.records_wallclock:
            return 0
        return int((time.time() - self.start_time) * 1000)

    def run(self, claim_episode: ClaimEpisode, emit: Emit, should_stop: ShouldStop) -> int:
        """Loop until the episode budget is exhausted or a stop is requested; returns steps taken."""
        config = self.config
        episode: Optional[int] = None
        while not should_stop():
            # Episodes are claimed when they start so no worker begins one past the budget
            if self.env.done:
                episode = claim_episode()
                if episode is None:
                    break
            self.shared.snapshot(into=self.local)
            epsilon = config.epsilon_at(self.shared.global_step)
            rollout = collect_rollout(self.env, self.network, self.local, config.t_max, epsilon, self.rng)

            gradients = accumulate_gradients(
                rollout, self.network, self.local, config.discount,
                config.entropy_coef, config.value_coef, config.grad_clip,
            )
            global_step = apply_update(self.shared, gradients, self.optimizer)
            self.steps += len(rollout)

            if rollout.terminal:
                emit(EpisodeRecord(
                    episode=episode,
                    worker=self.worker_id,
                    global_step=global_step,
                    score=rollout.episode_score,
                    wallclock_ms=self._wallclock_ms(),
                ))
        return self.steps


class Supervisor:
    """Writes the training log and handles evaluation points, checkpoints and rollback."""

    def __init__(self, config: TrainConfig, arch: ArchitectureSpec, minigame: str, seed: int,
                 shared: SharedStore, output_dir: Optional[Path], initial: InitialState,
                 annotation: Optional[str] = None):
        self.config = config
        self.arch = arch
        self.minigame = minigame
        self.seed = seed
        self.shared = shared
        self.output_dir = output_dir
        self.log = TrainingLog(best_score=initial.best_score)
        self.completed = initial.episodes
        self.recent: Deque[float] = deque(maxlen=config.score_window)
        self.best_params: Optional[dict] = None
        self.rng_state: Callable[[], Optional[dict]] = lambda: None
        self._file = None
        self._writer = None
        if output_dir is not None:
            self._open(annotation, append=initial.episodes > 0)

    @property
    def log_path(self) -> Optional[Path]:
        return self.output_dir / OutputConfig.TRAIN_LOG if self.output_dir is not None else None

    def _open(self, annotation: Optional[str], append: bool) -> None:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.log_path
        append = append and path.exists()
        self._file = open(path, "a" if append else "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._file, lineterminator="\n")
        if not append:
            if annotation:
                self._file.write(f"# {annotation}\n")
            self._writer.writerow(OutputConfig.TRAIN_HEADER)
            self._file.flush()

    def handle(self, record: EpisodeRecord) -> None:
        self.log.records.append(record)
        self.log.final_step = max(self.log.final_step, record.global_step)
        self.recent.append(record.score)
        self.completed += 1
        if self._writer is not None:
            self._writer.writerow([record.episode, record.worker, record.global_step,
                                   repr(float(record.score)), record.wallclock_ms])
            self._file.flush()
        logger.debug(f"Episode {record.episode} (worker {record.worker}): score {record.score}, T={record.global_step}")
        if self.completed % self.config.checkpoint_every == 0:
            self._evaluation_point(record)

    def _metadata(self, global_step: int, mean_score: float) -> CheckpointMetadata:
        rng = {"seed": self.seed, "workers": self.config.workers}
        state = self.rng_state()
        if state is not None:
            rng["state"] = state
        return CheckpointMetadata.for_run(
            self.arch, self.minigame,
            global_step=global_step,
            episodes=self.completed,
            mean_score=mean_score,
            rng_state=json.dumps(rng, sort_keys=True),
        )

    def _evaluation_point(self, record: EpisodeRecord) -> None:
        mean = float(np.mean(self.recent))
        params = self.shared.snapshot()
        metadata = self._metadata(record.global_step, mean)
        point = EvaluationPoint(episode=self.completed, global_step=record.global_step, mean_score=mean)

        if self.output_dir is not None:
            name = f"episode_{self.completed:06d}{CheckpointConfig.SUFFIX}"
            save(params, metadata, self.output_dir / OutputConfig.CHECKPOINT_DIR / name)

        best = self.log.best_score
        if best is None or mean > best:
            point.best = True
            self.log.best_score = mean
            self.best_params = {name: value.copy() for name, value in params.values().items()}
            if self.output_dir is not None:
                save(params, metadata, self.output_dir / OutputConfig.BEST_CHECKPOINT)
            logger.info(f"Evaluation point at episode {self.completed}: mean {mean:.3f} (new best)")
        elif self.config.rollback_ratio > 0 and self.best_params is not None and mean < self.config.rollback_ratio * best:
            self.shared.write(self.best_params)
            point.rolled_back = True
            logger.info(f"Evaluation point at episode {self.completed}: mean {mean:.3f} below "
                        f"{self.config.rollback_ratio:.2f} x best {best:.3f}; rolled back to best parameters")
        else:
            logger.info(f"Evaluation point at episode {self.completed}: mean {mean:.3f} (best {best:.3f})")
        self.log.evaluations.append(point)

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None


def _claim_from(counter, budget: int) -> ClaimEpisode:
    def claim() -> Optional[int]:
        with counter.get_lock():
            if counter.value >= budget:
                return None
            index = int(counter.value)
            counter.value += 1
            return index
    return claim


def _worker_main(worker_id: int, minigame: str, arch: ArchitectureSpec, config: TrainConfig, seed: int,
                 shared: SharedStore, episodes, budget: int, records, stop, start_time: float) -> None:
    """Entry point of a worker process; reports episodes, completion or a crash through the queue."""
    signal.signal(signal.SIGINT, signal.SIG_IGN)
    try:
        learner = ActorLearner(worker_id, minigame, arch, config, shared, seed, start_time=start_time)
        steps = learner.run(
            claim_episode=_claim_from(episodes, budget),
            emit=lambda record: records.put(("episode", worker_id, record)),
            should_stop=stop.is_set,
        )
        logger.info(f"Worker {worker_id} finished after {steps} steps")
        records.put(("done", worker_id, None))
    except Exception:
        logger.exception(f"Worker {worker_id} crashed")
        stop.set()
        records.put(("error", worker_id, traceback.format_exc()))


def _run_single(supervisor: Supervisor, minigame: str, arch: ArchitectureSpec, config: TrainConfig,
                seed: int, shared: SharedStore, initial: InitialState, start_time: float) -> None:
    learner = ActorLearner(0, minigame, arch, config, shared, seed, rng_state=initial.rng_state,
                           start_time=start_time)
    supervisor.rng_state = lambda: learner.rng.bit_generator.state
    counter = LocalCounter(initial.episodes)
    learner.run(
        claim_episode=_claim_from(counter, config.episodes),
        emit=supervisor.handle,
        should_stop=lambda: False,
    )


def _run_parallel(supervisor: Supervisor, minigame: str, arch: ArchitectureSpec, config: TrainConfig,
                  seed: int, shared: SharedStore, ctx, initial: InitialState, start_time: float) -> None:
    records = ctx.Queue()
    stop = ctx.Event()
    episodes = ctx.Value("q", initial.episodes)
    processes = [
        ctx.Process(
            target=_worker_main,
            args=(worker_id, minigame, arch, config, seed, shared, episodes, config.episodes,
                  records, stop, start_time),
            name=f"actor-learner-{worker_id}",
            daemon=True,
        )
        for worker_id in range(config.workers)
    ]
    for process in processes:
        process.start()

    finished = set()
    failure: Optional[str] = None
    try:
        while len(finished) < len(processes):
            try:
                kind, worker_id, payload = records.get(timeout=1.0)
            except queue.Empty:
                for worker_id, process in enumerate(processes):
                    if worker_id not in finished and not process.is_alive() and process.exitcode != 0:
                        finished.add(worker_id)
                        failure = failure or f"worker {worker_id} exited with code {process.exitcode}"
                        stop.set()
                continue
            if kind == "episode":
                supervisor.handle(payload)
            elif kind == "done":
                finished.add(worker_id)
            else:
                finished.add(worker_id)
                failure = failure or f"worker {worker_id} crashed:\n{payload}"
                stop.set()
    except KeyboardInterrupt:
        stop.set()
        failure = "interrupted"
    finally:
        for process in processes:
            process.join(timeout=5.0)
            if process.is_alive():
                process.terminate()
    if failure is not None:
        raise TrainingError(failure)


def train(
    config: TrainConfig,
    minigame: str,
    arch: ArchitectureSpec,
    seed: int = 0,
    output_dir: Optional[Path] = None,
    initial: Optional[InitialState] = None,
    annotation: Optional[str] = None,
) -> TrainingLog:
    """
    Run asynchronous advantage actor-critic training.

    With workers == 1 the single actor-learner runs in this process against a
    process-local store and the run is a deterministic function of seed.
    Otherwise each worker is a separate process sharing a RawArray store.

    Args:
        config: Hyperparameters and episode budget
        minigame: Minigame name
        arch: Network variant and observation shapes
        seed: Run seed (parameter init and worker generators)
        output_dir: Run directory for the log and checkpoints; None keeps everything in memory
        initial: Starting parameters, T, episode count and generator state; fresh if None
        annotation: Comment written as the first line of the training log

    Returns:
        TrainingLog with per-episode records, evaluation points and throughput

    Raises:
        TrainingError: If a worker fails; the log written so far is flushed first
    """
    if arch.obs_spec.resolution != config.resolution:
        raise ValueError(f"Architecture resolution {arch.obs_spec.resolution} != config resolution {config.resolution}")
    if initial is None:
        initial = InitialState(params=build(arch, seed))
    output_dir = Path(output_dir) if output_dir is not None else None

    ctx = None
    if config.workers > 1:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
    shared = SharedStore.create(initial.params, ctx=ctx, lock_mode=config.lock_mode, global_step=initial.global_step)
    supervisor = Supervisor(config, arch, minigame, seed, shared, output_dir, initial, annotation)

    logger.info(f"Training {arch.variant} on {minigame}: {config.workers} worker(s), "
                f"episodes {initial.episodes}..{config.episodes}, T starts at {initial.global_step}")
    start_time = time.time()
    start_clock = time.perf_counter()
    try:
        if ctx is None:
            _run_single(supervisor, minigame, arch, config, seed, shared, initial, start_time)
        else:
            _run_parallel(supervisor, minigame, arch, config, seed, shared, ctx, initial, start_time)
    except TrainingError as e:
        e.log_path = supervisor.log_path
        raise
    except Exception as e:
        logger.exception("Training aborted")
        raise TrainingError(f"Training aborted: {e}", supervisor.log_path) from e
    finally:
        supervisor.close()

    log = supervisor.log
    log.final_step = shared.global_step
    log.final_params = shared.snapshot()
    log.elapsed_seconds = time.perf_counter() - start_clock
    steps = log.final_step - initial.global_step
    log.steps_per_second = steps / log.elapsed_seconds if log.elapsed_seconds > 0 else 0.0
    logger.info(f"Training finished: {len(log.records)} episodes, T={log.final_step}, "
                f"{log.steps_per_second:.1f} steps/s, best mean {log.best_score}")
    return log


def read_train_log(path: Path) -> List[EpisodeRecord]:
    """Parse a training log, skipping '#' annotation lines."""
    with open(path, newline="", encoding="utf-8") as handle:
        rows = csv.DictReader(line for line in handle if not line.startswith("#"))
        return [EpisodeRecord(**row) for row in rows]
