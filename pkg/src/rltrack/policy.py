"""Policy network scoring prediction maps, and the template-selection rules.

The network maps one 31x31 prediction map to a reliability score in (0, 1).
For a pool of N templates the policy over actions is the normalised score
vector ``pi(a=i | s) = sigma_i / sum_j sigma_j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from .matching import MAP_SIZE
from .nn import layers as L
from .nn import ops
from .nn.tensor import ShapeError, Tensor

KEEP_PROB = 0.7
DEFAULT_INIT_STD = float(np.sqrt(0.1))  # zero-mean Gaussian with variance 0.1

POLICY_SPEC = [
    L.conv(5, 3, 4, padding="valid"),
    L.LayerSpec("relu"),
    L.pool(),
    L.conv(3, 1, 8, padding="valid"),
    L.LayerSpec("relu"),
    L.LayerSpec("reshape", shape=(32,)),
    L.fc(128),
    L.LayerSpec("relu"),
    L.LayerSpec("dropout", keep_prob=KEEP_PROB),
    L.fc(1),
    L.LayerSpec("sigmoid"),
]


class PolicyNet(L.Network):
    prefix = "policy"

    def __init__(self, rng: Optional[np.random.Generator] = None, init_std: float = DEFAULT_INIT_STD, dtype=np.float32):
        super().__init__(dtype)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.conv1 = self.conv_layer("conv1", 5, 1, 4, 3, "valid", rng, init_std)
        self.conv2 = self.conv_layer("conv2", 3, 4, 8, 1, "valid", rng, init_std)
        self.fc1 = self.dense_layer("fc1", 32, 128, rng, init_std)
        self.fc2 = self.dense_layer("fc2", 128, 1, rng, init_std)
        # biases follow the same Gaussian recipe as the weights
        for p in self.params.values():
            if p.name.endswith(".b"):
                p.data[...] = rng.normal(0.0, init_std, size=p.shape)

    def forward_logits(self, maps, rng: Optional[np.random.Generator] = None) -> Tensor:
        """Pre-sigmoid scores, shape (B,). Records the graph for :meth:`backward`."""
        x = np.asarray(maps)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != (MAP_SIZE, MAP_SIZE):
            raise ShapeError(f"policy input must be (B, {MAP_SIZE}, {MAP_SIZE}), got {x.shape}")
        h = Tensor(x[..., None], dtype=self.dtype)
        h = ops.maxpool2x2(ops.relu(self.conv1(h)))
        h = ops.relu(self.conv2(h))
        h = ops.dropout(ops.relu(self.fc1(ops.flatten(h))), KEEP_PROB, self.training, rng)
        z = self.fc2(h)
        return self.record(ops.reshape(z, (x.shape[0],)))

    def raw_scores(self, maps) -> np.ndarray:
        """Sigmoid score per map (inference; dropout off, nothing recorded)."""
        training, self.training = self.training, False
        try:
            z = self.forward_logits(maps).data
        finally:
            self.training = training
            self._recorded = None
        return ops.sigmoid_array(z.astype(np.float64))


def build_policy_net(seed: int = 0, init_std: float = DEFAULT_INIT_STD) -> PolicyNet:
    return PolicyNet(np.random.default_rng(seed), init_std=init_std)


@dataclass(frozen=True)
class PolicyScores:
    raw: np.ndarray
    normalized: np.ndarray

    @classmethod
    def from_raw(cls, raw) -> "PolicyScores":
        raw = np.asarray(raw, dtype=np.float64).reshape(-1)
        if raw.size == 0:
            raise ValueError("at least one score is required")
        if np.any(raw <= 0):
            raise ValueError("raw scores must be positive")
        return cls(raw, raw / raw.sum())


def score_templates(policy: PolicyNet, maps: Sequence[np.ndarray]) -> PolicyScores:
    if len(maps) == 0:
        raise ValueError("score_templates needs at least one map")
    return PolicyScores.from_raw(policy.raw_scores(np.stack(maps)))


def sample_action(scores: PolicyScores, rng: np.random.Generator) -> int:
    """Draw an index with probability equal to its normalised score."""
    if scores.normalized.size == 1:
        return 0
    return int(rng.choice(scores.normalized.size, p=scores.normalized))


def greedy_action(scores: PolicyScores) -> int:
    """Highest normalised score; ties resolve to the lowest index."""
    return int(np.argmax(scores.raw))


def log_policy(policy: PolicyNet, maps, action: int) -> float:
    s = policy.raw_scores(maps)
    if not 0 <= action < s.size:
        raise IndexError(f"action {action} outside pool of {s.size}")
    return float(np.log(s[action]) - np.log(s.sum()))


def _dlogpi_dlogits(z: np.ndarray, action: int) -> np.ndarray:
    """d log(sigma_a / sum_j sigma_j) / d z_j.

    Written as ``[j == a](1 - s_j) - (s_j / S)(1 - s_j)`` so that a single
    template gives exactly zero (s / s == 1 in floating point).
    """
    s = ops.sigmoid_array(z.astype(np.float64))
    share = s / s.sum()
    g = -share * (1.0 - s)
    g[action] += 1.0 - s[action]
    return g


def log_policy_gradient(
    policy: PolicyNet,
    states: Sequence[np.ndarray],
    actions: Sequence[int],
    weights: Optional[Sequence[float]] = None,
    rng: Optional[np.random.Generator] = None,
) -> Dict[str, np.ndarray]:
    """Gradient of ``sum_k w_k log pi(a_k | s_k)`` w.r.t. the policy parameters.

    Each state is an (N_k, 31, 31) stack of prediction maps. All states are
    pushed through the network as one batch; because the policy weights are
    shared across templates and states, the per-state gradients accumulate in
    a single backward pass. Dropout is applied only if the network is in
    training mode and an ``rng`` is given.
    """
    if len(states) != len(actions):
        raise ValueError("one action per state is required")
    if weights is None:
        weights = np.ones(len(states))
    policy.zero_grad()
    if len(states) == 0:
        return policy.grads()
    sizes = [len(s) for s in states]
    for a, n in zip(actions, sizes):
        if not 0 <= a < n:
            raise IndexError(f"action {a} outside pool of {n}")
    batch = np.concatenate([np.asarray(s).reshape(-1, MAP_SIZE, MAP_SIZE) for s in states])
    z = policy.forward_logits(batch, rng if policy.training else None)
    upstream = np.empty(batch.shape[0])
    start = 0
    for n, a, w in zip(sizes, actions, weights):
        upstream[start : start + n] = w * _dlogpi_dlogits(z.data[start : start + n], a)
        start += n
    return policy.backward(upstream)
