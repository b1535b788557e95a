"""Adam and Adagrad, operating in place on parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained NaN or Inf; the step was not applied."""


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    step_count: int = 0
    buffers: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("adam", "adagrad"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


class Optimizer:
    kind = ""

    def __init__(self, params: Iterable[Tensor], learning_rate: float, eps: float = 1e-8):
        self.params: List[Tensor] = list(params)
        self.eps = eps
        self.state = OptimizerState(self.kind, learning_rate)
        for i, p in enumerate(self.params):
            self.state.buffers[self._key(i, p)] = self._init_buffers(p.data)

    @staticmethod
    def _key(i: int, p: Tensor) -> str:
        return p.name or f"param{i}"

    def _init_buffers(self, data: np.ndarray) -> Dict[str, np.ndarray]:
        raise NotImplementedError

    def _update(self, buf: Dict[str, np.ndarray], g: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def step(self, grads: Optional[List[np.ndarray]] = None) -> None:
        """Apply one update from ``grads`` (defaults to each parameter's ``grad``).

        Parameters without a gradient are treated as having a zero gradient.
        Raises :class:`NonFiniteGradientError` before touching any parameter
        if a gradient is not finite.
        """
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if len(grads) != len(self.params):
            raise ValueError("one gradient per parameter is required")
        for p, g in zip(self.params, grads):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {p.name}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(f"non-finite gradient for {p.name}")
        self.state.step_count += 1
        for i, (p, g) in enumerate(zip(self.params, grads)):
            buf = self.state.buffers[self._key(i, p)]
            p.data -= self._update(buf, g.astype(p.dtype, copy=False)).astype(p.dtype, copy=False)


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, params, learning_rate: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2 = beta1, beta2
        super().__init__(params, learning_rate, eps)

    def _init_buffers(self, data):
        return {"m": np.zeros_like(data), "v": np.zeros_like(data)}

    def _update(self, buf, g):
        t = self.state.step_count
        buf["m"] *= self.beta1
        buf["m"] += (1 - self.beta1) * g
        buf["v"] *= self.beta2
        buf["v"] += (1 - self.beta2) * g * g
        m_hat = buf["m"] / (1 - self.beta1**t)
        v_hat = buf["v"] / (1 - self.beta2**t)
        return self.state.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


class Adagrad(Optimizer):
    kind = "adagrad"

    def __init__(self, params, learning_rate: float = 1e-4, eps: float = 1e-8):
        super().__init__(params, learning_rate, eps)

    def _init_buffers(self, data):
        return {"sum_sq": np.zeros_like(data)}

    def _update(self, buf, g):
        buf["sum_sq"] += g * g
        return self.state.learning_rate * g / (np.sqrt(buf["sum_sq"]) + self.eps)
