"""End-to-end helpers shared by the CLI, the acceptance tests and the demos."""

from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .config import MatcherConfig, SuiteConfig, matcher_init
from .data.pairs import PairDataset
from .data.sequences import Sequence
from .data.synthetic import synthetic_suite
from .matching import MatchingNet, MatchTrainingLog, build_matching_net, train_matching
from .nn.serialization import load_weights
from .policy import PolicyNet, build_policy_net
from .trainer import TrackingEnvironment, TrainConfig, TrainingLog, train_policy


def pretrain_matcher(cfg: MatcherConfig = MatcherConfig(), seed: int = 0, callback=None) -> Tuple[MatchingNet, MatchTrainingLog]:
    net = build_matching_net(seed, init_std=matcher_init(cfg))
    pairs = PairDataset(cfg.matcher_pairs, seed=seed)
    log = train_matching(
        net,
        iter(pairs),
        cfg.matcher_steps,
        batch_size=cfg.matcher_batch,
        learning_rate=cfg.matcher_learning_rate,
        rng=np.random.default_rng([seed, 5]),
        callback=callback,
    )
    return net, log


def training_sequences(suite: SuiteConfig, seed: int) -> List[Sequence]:
    return synthetic_suite(suite.suite_size, seed, suite.suite_length, suite.suite_occlusions, split="train")


def evaluation_sequences(suite: SuiteConfig, seed: int) -> List[Sequence]:
    return synthetic_suite(suite.suite_size, seed, suite.suite_length, suite.suite_occlusions, split="eval")


def train_policy_on(
    matcher: MatchingNet,
    sequences: List[Sequence],
    cfg: TrainConfig = TrainConfig(),
    seed: int = 0,
    log_path=None,
    checkpoint_dir=None,
    callback=None,
) -> Tuple[PolicyNet, TrainingLog]:
    policy = build_policy_net(seed)
    env = TrackingEnvironment(matcher, sequences, cfg)
    log = train_policy(policy, env, cfg, seed=seed, log_path=log_path, checkpoint_dir=checkpoint_dir, callback=callback)
    return policy, log


def load_networks(paths) -> Tuple[Optional[MatchingNet], Optional[PolicyNet]]:
    """Load matcher and/or policy weights; each file is recognised by its parameter names."""
    matcher = policy = None
    for path in paths:
        state = load_weights(path)
        prefixes = {k.split(".", 1)[0] for k in state}
        if prefixes == {MatchingNet.prefix}:
            matcher = MatchingNet()
            matcher.load_state_dict(state)
        elif prefixes == {PolicyNet.prefix}:
            policy = PolicyNet()
            policy.load_state_dict(state)
        else:
            raise ValueError(f"{path}: unrecognised weights (parameter groups {sorted(prefixes)})")
    return matcher, policy
