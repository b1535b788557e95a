"""Policy training with discounted REINFORCE, outcome-signed updates and experience replay.

One training step handles one episode:

1. roll out the episode with actions sampled from the current policy;
2. label it success/failure from the mean IoU of its final frames;
3. form the discounted episodic term ``sum_t beta^(L-t) grad log pi(a_t|s_t)``,
   signed by the outcome;
4. store the episode's (state, action) pairs in the matching replay buffer;
5. draw up to 2L experiences from each buffer and add their outcome-signed,
   undiscounted log-policy gradients;
6. hand the combined ascent direction to Adagrad.

All gradient terms of a step go through the policy network in one batched
forward/backward pass, which is valid because the objective is linear in the
per-state log-probabilities.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .boxes import BoundingBox
from .matching import MAP_SIZE, MatchingNet, gaussian_target_map
from .metrics import iou
from .nn.optim import Adagrad
from .policy import PolicyNet, log_policy_gradient, PolicyScores
from .tracker import Tracker, TrackerConfig, run_lockstep
from .data.sequences import MAX_EPISODE, MIN_EPISODE, Sequence as TrackSequence, sample_episode

SUCCESS, FAILURE = "success", "failure"


class EpisodeSourceExhausted(RuntimeError):
    pass


@dataclass
class Experience:
    maps: np.ndarray  # (N, 31, 31)
    action: int
    outcome: str

    def __post_init__(self):
        if not 0 <= self.action < len(self.maps):
            raise IndexError(f"action {self.action} outside pool of {len(self.maps)}")


class ReplayMemory:
    """Separate bounded FIFO buffers for success and failure experiences."""

    def __init__(self, capacity: int = 5000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.buffers: Dict[str, Deque[Experience]] = {
            SUCCESS: deque(maxlen=capacity),
            FAILURE: deque(maxlen=capacity),
        }

    @property
    def success(self) -> Deque[Experience]:
        return self.buffers[SUCCESS]

    @property
    def failure(self) -> Deque[Experience]:
        return self.buffers[FAILURE]

    def sample(self, outcome: str, count: int, rng: np.random.Generator) -> List[Experience]:
        buf = self.buffers[outcome]
        k = min(count, len(buf))
        if k == 0:
            return []
        idx = rng.choice(len(buf), size=k, replace=False)
        return [buf[int(i)] for i in np.sort(idx)]


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4  # 1e-4 barely moves the policy within a 2,000-episode desk budget
    discount: float = 0.95
    episodes: int = 2000
    pool_capacity: int = 4
    update_interval: int = 50
    failure_threshold: float = 0.2
    failure_window: int = 20
    replay_capacity: int = 5000
    replay_per_buffer: int = 0  # 0 means 2L per buffer; a positive value fixes the count
    min_episode: int = MIN_EPISODE
    max_episode: int = MAX_EPISODE
    dropout: bool = True  # dropout in the gradient pass
    rollout_batch: int = 8  # episodes rolled out together against the same policy snapshot
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0 < self.discount <= 1:
            raise ValueError("discount must lie in (0, 1]")
        if not 0 < self.failure_threshold < 1:
            raise ValueError("failure_threshold must lie in (0, 1)")
        if self.episodes < 0 or self.rollout_batch < 1:
            raise ValueError("episodes must be >= 0 and rollout_batch >= 1")

    def replay_count(self, length: int) -> int:
        return self.replay_per_buffer if self.replay_per_buffer > 0 else 2 * length

    def tracker_config(self) -> TrackerConfig:
        return TrackerConfig(pool_capacity=self.pool_capacity, update_interval=self.update_interval, mode="sample")


# the discounted episodic term


def discount_weights(length: int, beta: float) -> np.ndarray:
    """``beta ** (L - t)`` for t = 1..L; the final step has weight 1."""
    return beta ** (length - np.arange(1, length + 1, dtype=np.float64))


def accumulate_discounted(step_grads: Sequence[Dict[str, np.ndarray]], beta: float) -> Dict[str, np.ndarray]:
    """Frame-by-frame accumulation of ``sum_t beta^(L-t) g_t``."""
    if not step_grads:
        return {}
    w = discount_weights(len(step_grads), beta)
    out = {k: np.zeros_like(v, dtype=np.float64) for k, v in step_grads[0].items()}
    for wt, g in zip(w, step_grads):
        for k, v in g.items():
            out[k] += wt * v
    return out


def evaluate_episode(
    predicted: Sequence[BoundingBox], ground_truth: Sequence[BoundingBox], threshold: float = 0.2, window: int = 20
) -> str:
    """Failure iff the mean IoU over the final ``window`` frames is strictly below ``threshold``."""
    if len(predicted) != len(ground_truth):
        raise ValueError(f"{len(predicted)} predictions for {len(ground_truth)} ground-truth boxes")
    return outcome_from_ious([iou(p, g) for p, g in zip(predicted, ground_truth)], threshold, window)


def outcome_from_ious(ious: Sequence[float], threshold: float = 0.2, window: int = 20) -> str:
    if len(ious) == 0:
        raise ValueError("empty episode")
    return FAILURE if float(np.mean(ious[-window:])) < threshold else SUCCESS


def outcome_sign(outcome: str) -> float:
    if outcome == SUCCESS:
        return 1.0
    if outcome == FAILURE:
        return -1.0
    raise ValueError(f"unknown outcome {outcome!r}")


def apply_episode_update(policy: PolicyNet, delta: Dict[str, np.ndarray], outcome: str, scale: float = 1.0) -> None:
    """Raw additive step ``theta += scale * delta`` on success, ``theta -= scale * delta`` on failure."""
    sign = outcome_sign(outcome)
    for name, d in delta.items():
        p = policy.params[name]
        if p.shape != np.shape(d):
            raise ValueError(f"update for {name} has shape {np.shape(d)}, parameter is {p.shape}")
    for name, d in delta.items():
        policy.params[name].data += (sign * scale * np.asarray(d)).astype(policy.params[name].dtype)
    policy.on_weights_changed()


def push_experiences(memory: ReplayMemory, experiences: Sequence[Experience], outcome: str) -> None:
    outcome_sign(outcome)
    for e in experiences:
        memory.buffers[outcome].append(Experience(e.maps, e.action, outcome))


def replay_samples(memory: ReplayMemory, count: int, rng: np.random.Generator) -> List[Experience]:
    return memory.sample(SUCCESS, count, rng) + memory.sample(FAILURE, count, rng)


def replay_gradient(
    policy: PolicyNet, memory: ReplayMemory, count: int, rng: np.random.Generator
) -> Tuple[Dict[str, np.ndarray], int]:
    """Outcome-signed, undiscounted sum of replayed log-policy gradients and the number of terms."""
    picks = replay_samples(memory, count, rng)
    grads = log_policy_gradient(
        policy, [e.maps for e in picks], [e.action for e in picks], [outcome_sign(e.outcome) for e in picks]
    )
    return grads, len(picks)


def replay_update(
    policy: PolicyNet, memory: ReplayMemory, length: int, rng: np.random.Generator, learning_rate: float, per_buffer: int = 0
) -> int:
    """Raw additive replay step; returns the number of replayed terms."""
    count = per_buffer if per_buffer > 0 else 2 * length
    grads, n = replay_gradient(policy, memory, count, rng)
    if n:
        for name, g in grads.items():
            policy.params[name].data += (learning_rate * g).astype(policy.params[name].dtype)
        policy.on_weights_changed()
    return n


# rollouts


@dataclass
class Rollout:
    states: List[np.ndarray]
    actions: List[int]
    ious: List[float]
    outcome: str
    boxes: Optional[List[BoundingBox]] = None

    @property
    def length(self) -> int:
        return len(self.states)

    def experiences(self) -> List[Experience]:
        return [Experience(s, a, self.outcome) for s, a in zip(self.states, self.actions)]


def episode_gradient(policy: PolicyNet, rollout: Rollout, beta: float, rng=None) -> Dict[str, np.ndarray]:
    """Unsigned discounted episodic term (learning rate not applied)."""
    return log_policy_gradient(policy, rollout.states, rollout.actions, discount_weights(rollout.length, beta), rng)


class TrackingEnvironment:
    """Episodes cut from a pool of sequences and tracked with a frozen matcher."""

    def __init__(
        self,
        matcher: MatchingNet,
        sequences: Sequence[TrackSequence],
        config: TrainConfig,
        episodes: Optional[int] = None,
    ):
        self.matcher = matcher
        self.sequences = sequences
        self.config = config
        self.remaining = episodes

    def rollouts(self, policy: PolicyNet, count: int, rng: np.random.Generator) -> List[Rollout]:
        if self.remaining is not None:
            if self.remaining <= 0:
                raise EpisodeSourceExhausted("no episodes left")
            count = min(count, self.remaining)
            self.remaining -= count
        cfg = self.config
        slices = [
            sample_episode(self.sequences, rng, cfg.min_episode, cfg.max_episode).take(self.sequences) for _ in range(count)
        ]
        jobs = []
        for ep in slices:
            tracker = Tracker(self.matcher, policy, cfg.tracker_config(), np.random.default_rng(rng.integers(2**63)))
            tracker.initialize(ep.frames[0], ep.ground_truth[0])
            jobs.append((tracker, ep.frames[1:]))
        results = run_lockstep(self.matcher, jobs)
        out = []
        for ep, res in zip(slices, results):
            boxes = [ep.ground_truth[0]] + [r.box for r in res]
            ious = [iou(p, g) for p, g in zip(boxes, ep.ground_truth)]
            out.append(
                Rollout(
                    [r.maps for r in res],
                    [r.chosen_template for r in res],
                    ious,
                    outcome_from_ious(ious, cfg.failure_threshold, cfg.failure_window),
                    boxes,
                )
            )
        return out


def run_training_episode(
    matcher: MatchingNet, policy: PolicyNet, episode: TrackSequence, rng: np.random.Generator, config: TrainConfig
) -> Tuple[List[Experience], Dict[str, np.ndarray], List[BoundingBox]]:
    """Roll out one episode; returns (experiences, unsigned discounted gradient, predicted boxes).

    The experiences carry the episode's outcome.
    """
    env = TrackingEnvironment(matcher, [episode], replace_config(config, min_episode=len(episode), max_episode=len(episode)))
    (ro,) = env.rollouts(policy, 1, rng)
    return ro.experiences(), episode_gradient(policy, ro, config.discount), ro.boxes


def replace_config(config: TrainConfig, **changes) -> TrainConfig:
    values = {f.name: getattr(config, f.name) for f in fields(config)}
    values.update(changes)
    return TrainConfig(**values)


class BanditEnvironment:
    """Two-template selection problem with known answer.

    Each step offers a sharp single-peak map (the informative template) and a
    map of uniform noise, in random order. Choosing the informative map yields
    an IoU drawn from U(0.5, 1), the noise map yields 0. Episodes are labelled
    with the usual final-window rule at ``threshold``.
    """

    def __init__(self, length: int = 30, threshold: float = 0.5, window: int = 20):
        self.length, self.threshold, self.window = length, threshold, window

    def state(self, rng: np.random.Generator) -> Tuple[np.ndarray, int]:
        off = tuple(int(v) for v in rng.integers(-8, 9, size=2))
        informative = gaussian_target_map(off) * rng.uniform(0.6, 1.0) + 0.05 * rng.random((MAP_SIZE, MAP_SIZE))
        noise = rng.random((MAP_SIZE, MAP_SIZE)) * rng.uniform(0.3, 1.0)
        good = int(rng.integers(2))
        maps = [noise, noise]
        maps[good] = informative
        return np.stack(maps).astype(np.float32), good

    def rollouts(self, policy: PolicyNet, count: int, rng: np.random.Generator) -> List[Rollout]:
        out = []
        for _ in range(count):
            states, goods = zip(*(self.state(rng) for _ in range(self.length)))
            raw = policy.raw_scores(np.concatenate(states)).reshape(self.length, 2)
            p = raw / raw.sum(axis=1, keepdims=True)
            actions = [int(rng.random() >= p[t, 0]) for t in range(self.length)]
            ious = [float(rng.uniform(0.5, 1.0)) if a == g else 0.0 for a, g in zip(actions, goods)]
            out.append(Rollout(list(states), actions, ious, outcome_from_ious(ious, self.threshold, self.window)))
        return out

    def greedy_accuracy(self, policy: PolicyNet, n: int = 500, seed: int = 12345) -> float:
        """Fraction of fresh states where the greedy choice is the informative map."""
        rng = np.random.default_rng(seed)
        states, goods = zip(*(self.state(rng) for _ in range(n)))
        raw = policy.raw_scores(np.concatenate(states)).reshape(n, 2)
        return float(np.mean(np.argmax(raw, axis=1) == np.array(goods)))


# the loop


@dataclass
class EpisodeRecord:
    episode: int
    length: int
    outcome: str
    last_iou: float
    success_buffer: int
    failure_buffer: int
    success_rate: float
    replayed: int

    HEADER = "episode\tlength\toutcome\tmean_last_iou\tsuccess_buffer\tfailure_buffer\tsuccess_rate\treplayed"

    def line(self) -> str:
        return (
            f"{self.episode}\t{self.length}\t{self.outcome}\t{self.last_iou:.6f}\t"
            f"{self.success_buffer}\t{self.failure_buffer}\t{self.success_rate:.6f}\t{self.replayed}"
        )


@dataclass
class TrainingLog:
    records: List[EpisodeRecord] = field(default_factory=list)
    seconds: float = 0.0

    def write(self, path) -> None:
        Path(path).write_text("\n".join([EpisodeRecord.HEADER] + [r.line() for r in self.records]) + "\n")

    def window_success(self, size: int = 200) -> Tuple[float, float]:
        """Success rate over the first and the last ``size`` episodes."""
        wins = np.array([r.outcome == SUCCESS for r in self.records], dtype=float)
        if wins.size == 0:
            return float("nan"), float("nan")
        return float(wins[:size].mean()), float(wins[-size:].mean())


def train_step(
    policy: PolicyNet,
    optimizer: Adagrad,
    memory: ReplayMemory,
    rollout: Rollout,
    config: TrainConfig,
    rng: np.random.Generator,
) -> int:
    """One episode's update; returns the number of replayed gradient terms."""
    sign = outcome_sign(rollout.outcome)
    push_experiences(memory, rollout.experiences(), rollout.outcome)
    picks = replay_samples(memory, config.replay_count(rollout.length), rng)
    states = rollout.states + [e.maps for e in picks]
    actions = rollout.actions + [e.action for e in picks]
    weights = np.concatenate(
        [sign * discount_weights(rollout.length, config.discount), [outcome_sign(e.outcome) for e in picks]]
    )
    policy.train(config.dropout)
    try:
        ascent = log_policy_gradient(policy, states, actions, weights, rng)
    finally:
        policy.eval()
    optimizer.step([-ascent[p.name] for p in optimizer.params])
    policy.on_weights_changed()
    return len(picks)


def train_policy(
    policy: PolicyNet,
    environment,
    config: TrainConfig,
    seed: int = 0,
    log_path=None,
    checkpoint_dir=None,
    callback: Optional[Callable[[EpisodeRecord, PolicyNet], None]] = None,
) -> TrainingLog:
    """Train ``policy`` in place on episodes drawn from ``environment``."""
    rng = np.random.default_rng(seed)
    rollout_rng = np.random.default_rng([seed, 1])
    optimizer = Adagrad(policy.parameters(), learning_rate=config.learning_rate)
    memory = ReplayMemory(config.replay_capacity)
    log = TrainingLog()
    t0 = time.perf_counter()
    wins = 0
    episode = 0
    policy.eval()
    while episode < config.episodes:
        batch = environment.rollouts(policy, min(config.rollout_batch, config.episodes - episode), rollout_rng)
        if not batch:
            raise EpisodeSourceExhausted("environment returned no episodes")
        for ro in batch:
            replayed = train_step(policy, optimizer, memory, ro, config, rng)
            wins += ro.outcome == SUCCESS
            rec = EpisodeRecord(
                episode,
                ro.length,
                ro.outcome,
                float(np.mean(ro.ious[-config.failure_window :])),
                len(memory.success),
                len(memory.failure),
                wins / (episode + 1),
                replayed,
            )
            log.records.append(rec)
            if callback is not None:
                callback(rec, policy)
            episode += 1
            if checkpoint_dir is not None and config.checkpoint_every > 0 and episode % config.checkpoint_every == 0:
                Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
                policy.save(Path(checkpoint_dir) / f"policy_{episode:06d}.rdtw")
    log.seconds = time.perf_counter() - t0
    if log_path is not None:
        log.write(log_path)
    return log
