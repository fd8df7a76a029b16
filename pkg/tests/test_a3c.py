"""
Unit tests for returns, rollouts, gradient accumulation, shared updates and training.
"""
import numpy as np
import pytest
from pydantic import ValidationError

from app.a3c.evaluation import evaluate
from app.a3c.gradients import accumulate_gradients, rollout_objective
from app.a3c.returns import compute_returns
from app.a3c.rollout import Rollout, collect_rollout
from app.a3c.schemas import EpisodeRecord, TrainConfig
from app.a3c.shared import RMSPropOptimizer, SGDOptimizer, SharedStore, apply_update, make_optimizer
from app.a3c.trainer import InitialState, Supervisor, read_train_log, train
from app.ckpt.format import load
from app.config import OutputConfig
from app.env.minigames import make_minigame
from app.env.policies import oracle_policy, random_policy, simulate
from app.env.types import ObservationSpec
from app.net.architecture import ArchitectureSpec, build
from app.net.network import PolicyNetwork
from app.numcore.gradcheck import gradient_check
from app.numcore.tensor import CHECK_DTYPE, Parameter, ParameterSet, Tensor


def make_arch(variant: str = "baseline") -> ArchitectureSpec:
    """Helper to create an 8x8 architecture."""
    return ArchitectureSpec(variant=variant, obs_spec=ObservationSpec(resolution=8))


def make_config(**overrides) -> TrainConfig:
    """Helper to create a tiny single-worker training configuration."""
    settings = dict(
        workers=1, episodes=4, episode_cap=10, t_max=5, resolution=8,
        checkpoint_every=2, score_window=2,
    )
    settings.update(overrides)
    return TrainConfig(**settings)


class TestComputeReturns:
    """Test cases for n-step returns."""

    def test_bootstrapped(self):
        """Test the hand-evaluated non-terminal example."""
        assert compute_returns([1, 0, 2], terminal=False, bootstrap_value=4, discount=0.5) == [2.0, 2.0, 4.0]

    def test_terminal(self):
        """Test that terminal rollouts ignore the bootstrap value."""
        assert compute_returns([1, 1], terminal=True, bootstrap_value=0.0, discount=0.99) == pytest.approx([1.99, 1.0])

    def test_zero_discount(self):
        """Test that a zero discount returns the rewards."""
        rewards = [0.5, -1.0, 3.0]
        assert compute_returns(rewards, terminal=False, bootstrap_value=9.0, discount=0.0) == rewards

    @pytest.mark.parametrize("terminal", [False, True])
    @pytest.mark.parametrize("discount", [0.0, 0.5, 0.99, 1.0])
    def test_closed_form(self, discount, terminal):
        """Test against sum_k discount^k r_{i+k} + discount^(n-i) V on random sequences."""
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(1, 9))
            rewards = rng.normal(size=n)
            bootstrap = float(rng.normal())
            tail = 0.0 if terminal else bootstrap
            returns = compute_returns(rewards, terminal, bootstrap, discount)
            for i in range(n):
                expected = sum(discount ** k * rewards[i + k] for k in range(n - i)) + discount ** (n - i) * tail
                assert returns[i] == pytest.approx(expected, abs=1e-12)


class TestCollectRollout:
    """Test cases for rollout collection."""

    def test_random_actions_respect_mask(self):
        """Test that epsilon 1 only picks available functions, covering each of them."""
        arch = make_arch()
        network, params = PolicyNetwork(arch), build(arch, 0)
        env = make_minigame("shards", resolution=8, episode_cap=50)
        rng = np.random.default_rng(1)
        used = set()
        for _ in range(20):
            rollout = collect_rollout(env, network, params, 10, 1.0, rng)
            for transition in rollout.transitions:
                assert transition.observation.available[transition.action.function_id]
                used.add(transition.action.function_id)
        assert {0, 1, 2, 3} <= used

    def test_random_functions_uniform(self):
        """Test a chi-square fit of epsilon-1 function choices to uniform over each legal set."""
        arch = make_arch()
        network, params = PolicyNetwork(arch), build(arch, 0)
        env = make_minigame("shards", resolution=8, episode_cap=100)
        rng = np.random.default_rng(21)
        counts = {}
        for _ in range(400):
            rollout = collect_rollout(env, network, params, 10, 1.0, rng)
            for transition in rollout.transitions:
                legal = tuple(np.flatnonzero(transition.observation.available))
                tally = counts.setdefault(legal, np.zeros(len(transition.observation.available)))
                tally[transition.action.function_id] += 1

        # 0.1% critical values of chi-square by degrees of freedom
        critical = {1: 10.83, 2: 13.82, 3: 16.27, 4: 18.47, 5: 20.52, 6: 22.46}
        checked = 0
        for legal, tally in counts.items():
            observed = tally[list(legal)]
            if observed.sum() < 20 * len(legal):
                continue
            expected = observed.sum() / len(legal)
            statistic = float(np.sum((observed - expected) ** 2 / expected))
            assert statistic < critical[len(legal) - 1], (legal, observed)
            checked += 1
        assert checked > 0

    def test_learned_policy_never_unavailable(self):
        """Test that sampled network actions never hit the unavailable-action fallback."""
        arch = make_arch()
        network = PolicyNetwork(arch)
        params = build(arch, 22)
        rng = np.random.default_rng(23)
        for param in params:
            param.data[...] += rng.normal(scale=0.1, size=param.data.shape)
        for minigame in ("beacon", "shards", "hunt", "skirmish"):
            env = make_minigame(minigame, resolution=8, episode_cap=30)
            for epsilon in (0.0, 0.3):
                for _ in range(12):
                    collect_rollout(env, network, params, 5, epsilon, rng)
            assert env.unavailable_actions == 0, minigame

    def test_deterministic(self):
        """Test that a fixed generator seed gives an identical rollout."""
        arch = make_arch()
        network, params = PolicyNetwork(arch), build(arch, 2)
        runs = []
        for _ in range(2):
            env = make_minigame("beacon", resolution=8)
            rollout = collect_rollout(env, network, params, 8, 0.0, np.random.default_rng(3))
            runs.append(([t.action for t in rollout.transitions], rollout.rewards, rollout.bootstrap_value))
        assert runs[0] == runs[1]

    def test_episode_end_shortens_rollout(self):
        """Test that an episode ending before t_max stops the rollout with a zero bootstrap."""
        arch = make_arch()
        env = make_minigame("beacon", resolution=8, episode_cap=3)
        rollout = collect_rollout(env, PolicyNetwork(arch), build(arch, 4), 10, 0.5, np.random.default_rng(5))
        assert len(rollout) == 3
        assert rollout.terminal
        assert rollout.bootstrap_value == 0.0
        assert rollout.episode_score == env.score

    def test_continues_episode(self):
        """Test that consecutive rollouts continue the same episode."""
        arch = make_arch()
        network, params = PolicyNetwork(arch), build(arch, 6)
        env = make_minigame("beacon", resolution=8, episode_cap=10)
        rng = np.random.default_rng(7)
        first = collect_rollout(env, network, params, 4, 0.5, rng)
        collect_rollout(env, network, params, 4, 0.5, rng)
        assert not first.terminal
        assert env.step_count == 8

    def test_rollout_validation(self):
        """Test that empty or inconsistent rollouts are rejected."""
        with pytest.raises(ValueError):
            Rollout([], bootstrap_value=0.0, terminal=True)


class TestAccumulateGradients:
    """Test cases for the actor-critic gradient."""

    def _rollout(self, dtype=CHECK_DTYPE, t_max=3, seed=8):
        arch = make_arch()
        network = PolicyNetwork(arch)
        params = build(arch, seed, dtype=dtype)
        rng = np.random.default_rng(seed)
        for param in params:
            # Move biases off zero so ReLU kinks are rarely hit
            param.data[...] += rng.normal(scale=0.05, size=param.data.shape)
        env = make_minigame("beacon", resolution=8)
        rollout = collect_rollout(env, network, params, t_max, 0.3, np.random.default_rng(seed))
        return network, params, rollout

    def test_zero_advantage_gives_zero_gradient(self):
        """Test that returns equal to the values produce no gradient without entropy."""
        network, params, rollout = self._rollout(t_max=1)
        transition = rollout.transitions[0]
        transition.reward = transition.value
        exact = Rollout([transition], bootstrap_value=0.0, terminal=True, episode_score=0.0)
        gradients = accumulate_gradients(exact, network, params, 0.99, entropy_coef=0.0, value_coef=0.5)
        assert gradients.norm == 0.0
        assert gradients.policy_loss == 0.0

    def test_matches_finite_differences(self):
        """Test the accumulated gradient against central differences of the rollout loss."""
        network, params, rollout = self._rollout()
        gradients = accumulate_gradients(rollout, network, params, 0.9, entropy_coef=0.01, value_coef=0.5)
        objective = rollout_objective(rollout, network, params, 0.9, entropy_coef=0.01, value_coef=0.5)
        base = objective(True)
        for name, grad in gradients.grads.items():
            np.testing.assert_allclose(grad, base.grads[name], rtol=1e-10, atol=1e-12)
        report = gradient_check(objective, params, samples_per_tensor=3, seed=9)
        assert report.checked > 0
        assert report.max_relative_error < 1e-4, report.worst

    def test_clipping(self):
        """Test that the global norm is scaled down to the bound."""
        network, params, rollout = self._rollout(dtype=np.float32)
        gradients = accumulate_gradients(rollout, network, params, 0.99, 0.0, 0.5, grad_clip=1e-3)
        assert gradients.clipped
        total = np.sqrt(sum(np.sum(np.square(g, dtype=np.float64)) for g in gradients.grads.values()))
        assert total == pytest.approx(1e-3, rel=1e-4)

    def test_gradients_are_copies(self):
        """Test that later accumulations do not alias returned gradients."""
        network, params, rollout = self._rollout(dtype=np.float32)
        first = accumulate_gradients(rollout, network, params, 0.99, 0.0, 0.5)
        snapshot = {name: grad.copy() for name, grad in first.grads.items()}
        params.zero_grad()
        for name, grad in first.grads.items():
            np.testing.assert_array_equal(grad, snapshot[name])


class TestSharedStore:
    """Test cases for the shared parameter store and update rule."""

    def _params(self, value=None):
        data = np.arange(9, dtype=np.float32).reshape(3, 3) / 10 if value is None else value
        return ParameterSet([Parameter("w", Tensor(data))])

    def test_zero_gradient_advances_step(self):
        """Test that a zero gradient leaves parameters unchanged while T advances."""
        params = self._params()
        shared = SharedStore.create(params)
        optimizer = RMSPropOptimizer(1e-3, 0.99, 1e-8)
        step = shared.update({"w": np.zeros((3, 3), dtype=np.float32)}, optimizer, steps=5)
        assert step == 5 == shared.global_step
        np.testing.assert_array_equal(shared.snapshot()["w"].data, params["w"].data)

    @pytest.mark.parametrize("lock_mode", ["hogwild", "strict"])
    def test_rmsprop_hand_step(self, lock_mode):
        """Test one RMSProp step against the hand formula."""
        params = self._params()
        grad = np.linspace(-1.0, 1.0, 9, dtype=np.float32).reshape(3, 3)
        lr, alpha, eps = 1e-2, 0.99, 1e-8
        shared = SharedStore.create(params, lock_mode=lock_mode)
        shared.update({"w": grad}, RMSPropOptimizer(lr, alpha, eps), steps=1)

        g = (1 - alpha) * grad.astype(np.float64) ** 2
        expected = params["w"].data - lr * grad / np.sqrt(g + eps)
        np.testing.assert_allclose(shared.snapshot()["w"].data, expected, rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(shared.statistics()["w"], g, rtol=1e-5)

    @pytest.mark.parametrize("lock_mode", ["hogwild", "strict"])
    def test_rmsprop_three_steps(self, lock_mode):
        """Test three scalars over three RMSProp steps against a float64 re-implementation."""
        start = np.array([0.5, -0.25, 1.0], dtype=np.float32)
        grads = [np.array([0.2, -0.4, 1.0]), np.array([-0.1, 0.3, 0.5]), np.array([0.05, 0.0, -2.0])]
        lr, alpha, eps = 1e-2, 0.9, 1e-8
        shared = SharedStore.create(ParameterSet([Parameter("w", Tensor(start))]), lock_mode=lock_mode)
        optimizer = RMSPropOptimizer(lr, alpha, eps)

        theta, g = start.astype(np.float64), np.zeros(3)
        for step, grad in enumerate(grads, start=1):
            assert shared.update({"w": grad.astype(np.float32)}, optimizer, steps=1) == step
            g = alpha * g + (1 - alpha) * grad ** 2
            theta = theta - lr * grad / np.sqrt(g + eps)
            np.testing.assert_allclose(shared.snapshot()["w"].data, theta, rtol=1e-5, atol=1e-7)
            np.testing.assert_allclose(shared.statistics()["w"], g, rtol=1e-5, atol=1e-9)

    def test_first_step_bounded(self):
        """Test that the first RMSProp step moves each scalar by at most lr / sqrt(1 - alpha)."""
        params = self._params()
        shared = SharedStore.create(params)
        grad = np.random.default_rng(0).normal(scale=100.0, size=(3, 3)).astype(np.float32)
        shared.update({"w": grad}, RMSPropOptimizer(1e-3, 0.99, 1e-8), steps=1)
        delta = np.abs(shared.snapshot()["w"].data - params["w"].data)
        assert delta.max() <= 1e-3 / np.sqrt(0.01) * (1 + 1e-4)

    def test_sgd(self):
        """Test plain gradient descent."""
        params = self._params(np.ones((3, 3), dtype=np.float32))
        shared = SharedStore.create(params)
        shared.update({"w": np.full((3, 3), 2.0, dtype=np.float32)}, SGDOptimizer(0.25), steps=1)
        np.testing.assert_allclose(shared.snapshot()["w"].data, 0.5)

    def test_make_optimizer(self):
        """Test optimizer selection from the configuration."""
        assert isinstance(make_optimizer(make_config()), RMSPropOptimizer)
        assert isinstance(make_optimizer(make_config(optimizer="sgd")), SGDOptimizer)

    def test_snapshot_is_a_copy(self):
        """Test that local copies do not alias the shared buffers."""
        shared = SharedStore.create(self._params())
        local = shared.snapshot()
        local["w"].data[...] = 42.0
        assert not np.any(shared.snapshot()["w"].data == 42.0)

    def test_apply_update_uses_rollout_length(self):
        """Test that T advances by the number of rollout steps."""
        arch = make_arch()
        network, params = PolicyNetwork(arch), build(arch, 1)
        rollout = collect_rollout(make_minigame("beacon", resolution=8), network, params, 6, 0.5,
                                  np.random.default_rng(2))
        shared = SharedStore.create(params, global_step=100)
        gradients = accumulate_gradients(rollout, network, shared.snapshot(), 0.99, 0.0, 0.5)
        assert apply_update(shared, gradients, make_optimizer(make_config())) == 106


class TestTrainConfig:
    """Test cases for training configuration validation."""

    def test_defaults(self):
        """Test default learning rate and discount."""
        config = TrainConfig()
        assert config.learning_rate == 5e-4
        assert config.discount == 0.99

    def test_epsilon_order(self):
        """Test that the final epsilon may not exceed the initial one."""
        with pytest.raises(ValidationError):
            TrainConfig(epsilon_start=0.1, epsilon_end=0.5)

    @pytest.mark.parametrize("field,value", [("discount", 0.0), ("discount", 1.5), ("workers", 0), ("t_max", 0)])
    def test_out_of_range(self, field, value):
        """Test range checks on numeric fields."""
        with pytest.raises(ValidationError):
            TrainConfig(**{field: value})

    def test_epsilon_schedule(self):
        """Test linear decay over the first quarter of the step budget."""
        config = TrainConfig(episodes=100, episode_cap=100)
        assert config.epsilon_at(0) == 1.0
        assert config.epsilon_at(1250) == pytest.approx(0.525)
        assert config.epsilon_at(2500) == pytest.approx(0.05)
        assert config.epsilon_at(10_000) == pytest.approx(0.05)

    def test_wallclock_default(self):
        """Test that wall-clock logging is off for a single worker unless requested."""
        assert not make_config().records_wallclock
        assert make_config(log_wallclock=True).records_wallclock
        assert make_config(workers=2).records_wallclock


class TestTrain:
    """Test cases for the training loop."""

    def test_single_worker_deterministic(self):
        """Test that a fixed seed reproduces records and final parameters."""
        arch = make_arch()
        first = train(make_config(), "beacon", arch, seed=7)
        second = train(make_config(), "beacon", arch, seed=7)
        assert first.records == second.records
        for name in first.final_params.names():
            np.testing.assert_array_equal(first.final_params[name].data, second.final_params[name].data)

    def test_logged_steps_match_global_step(self):
        """Test that episode lengths add up to the final T."""
        log = train(make_config(), "beacon", make_arch(), seed=1)
        assert [record.episode for record in log.records] == [0, 1, 2, 3]
        assert log.final_step == 4 * 10
        assert log.records[-1].global_step == log.final_step
        assert all(record.wallclock_ms == 0 for record in log.records)

    def test_two_workers_share_the_budget(self, tmp_path):
        """Test that concurrent workers claim each episode exactly once and T sums their lengths."""
        log = train(make_config(workers=2, episodes=6), "beacon", make_arch(), seed=3, output_dir=tmp_path)
        assert sorted(record.episode for record in log.records) == list(range(6))
        assert log.final_step == 6 * 10
        assert sorted(record.episode for record in read_train_log(tmp_path / OutputConfig.TRAIN_LOG)) == list(range(6))
        assert {record.worker for record in log.records} <= {0, 1}

    def test_writes_log_and_best_checkpoint(self, tmp_path):
        """Test the training log and that best.ckpt holds the best evaluation mean."""
        log = train(make_config(), "beacon", make_arch(), seed=2, output_dir=tmp_path)
        assert read_train_log(tmp_path / OutputConfig.TRAIN_LOG) == log.records
        assert len(log.evaluations) == 2
        assert len(list((tmp_path / OutputConfig.CHECKPOINT_DIR).iterdir())) == 2

        _, metadata = load(tmp_path / OutputConfig.BEST_CHECKPOINT)
        assert metadata.mean_score == log.best_score == max(p.mean_score for p in log.evaluations)
        assert metadata.minigame == "beacon"

    def test_resolution_mismatch(self):
        """Test that the architecture and configuration must agree on the grid size."""
        with pytest.raises(ValueError):
            train(make_config(resolution=16), "beacon", make_arch())

    def test_initial_parameters(self):
        """Test that a zero learning rate keeps the supplied parameters."""
        arch = make_arch()
        params = build(arch, 3)
        log = train(make_config(optimizer="sgd", learning_rate=1e-30, episodes=1), "beacon", arch,
                    initial=InitialState(params=params.copy()))
        for name in params.names():
            np.testing.assert_allclose(log.final_params[name].data, params[name].data, atol=1e-20)


class TestSupervisor:
    """Test cases for evaluation points and rollback."""

    def test_rollback_restores_best(self):
        """Test that a collapse below the ratio restores the best parameters."""
        arch = make_arch()
        params = build(arch, 4)
        shared = SharedStore.create(params)
        config = make_config(checkpoint_every=1, score_window=1, rollback_ratio=0.5)
        supervisor = Supervisor(config, arch, "beacon", 0, shared, None, InitialState(params=params))

        supervisor.handle(EpisodeRecord(episode=0, worker=0, global_step=10, score=10.0))
        shared.write({name: np.zeros_like(value) for name, value in params.values().items()})
        supervisor.handle(EpisodeRecord(episode=1, worker=0, global_step=20, score=1.0))

        assert supervisor.log.best_score == 10.0
        assert [p.rolled_back for p in supervisor.log.evaluations] == [False, True]
        restored = shared.snapshot()
        for name in params.names():
            np.testing.assert_array_equal(restored[name].data, params[name].data)

    def test_no_rollback_when_disabled(self):
        """Test that a zero ratio never rolls back."""
        arch = make_arch()
        params = build(arch, 5)
        shared = SharedStore.create(params)
        supervisor = Supervisor(make_config(checkpoint_every=1, score_window=1), arch, "beacon", 0,
                                shared, None, InitialState(params=params))
        supervisor.handle(EpisodeRecord(episode=0, worker=0, global_step=10, score=5.0))
        supervisor.handle(EpisodeRecord(episode=1, worker=0, global_step=20, score=0.0))
        assert supervisor.log.rollbacks == 0
        assert supervisor.log.best_score == 5.0


class TestEvaluate:
    """Test cases for greedy evaluation."""

    def test_read_only(self):
        """Test that evaluation does not modify the parameters."""
        arch = make_arch()
        params = build(arch, 6)
        before = params.copy()
        stats = evaluate(params, arch, "beacon", 3, seed=0, episode_cap=10)
        assert stats.episodes == 3
        for name in params.names():
            np.testing.assert_array_equal(params[name].data, before[name].data)

    def test_deterministic(self):
        """Test that a fixed seed reproduces the statistics."""
        arch = make_arch()
        params = build(arch, 7)
        first = evaluate(params, arch, "shards", 2, seed=1, episode_cap=10)
        second = evaluate(params, arch, "shards", 2, seed=1, episode_cap=10)
        assert first == second

    def test_untrained_near_random_baseline(self):
        """Test that fresh parameters score in the random policy's range, far below the oracle."""
        arch = make_arch()
        game = make_minigame("beacon", resolution=8, episode_cap=40)
        oracle = simulate(game, oracle_policy("beacon"), 30, seed=0)
        baseline = simulate(game, random_policy(0), 30, seed=0)
        untrained = [evaluate(build(arch, seed), arch, "beacon", 10, seed=0, episode_cap=40).mean for seed in range(3)]
        assert baseline.mean < 0.25 * oracle.mean
        assert float(np.mean(untrained)) < 0.5 * oracle.mean

    def test_episode_count(self):
        """Test that at least one episode is required."""
        arch = make_arch()
        with pytest.raises(ValueError):
            evaluate(build(arch, 0), arch, "beacon", 0, seed=0)
