"""Parameterised layers, declarative layer specs and the ``Network`` base."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import ops
from .tensor import GraphError, ShapeError, Tensor, backward

LAYER_KINDS = ("conv", "maxpool", "dense", "relu", "sigmoid", "dropout", "concat", "reshape")


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer, used for shape tracing."""

    kind: str
    kernel: Optional[Tuple[int, int]] = None
    stride: int = 1
    out: Optional[int] = None
    padding: str = "same"
    keep_prob: Optional[float] = None
    shape: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if (self.kernel is not None) != (self.kind in ("conv", "maxpool")):
            raise ValueError("kernel is required for conv/maxpool and forbidden otherwise")
        if (self.keep_prob is not None) != (self.kind == "dropout"):
            raise ValueError("keep_prob is required for dropout and forbidden otherwise")
        if self.keep_prob is not None and not 0.0 < self.keep_prob <= 1.0:
            raise ValueError("keep_prob must lie in (0, 1]")
        if self.kind in ("conv", "dense") and (self.out is None or self.out < 1):
            raise ValueError(f"{self.kind} layer needs a positive output width")
        if self.padding not in ops.PADDING_MODES:
            raise ValueError(f"unknown padding {self.padding!r}")


def conv(k: int, stride: int, out: int, padding: str = "same") -> LayerSpec:
    return LayerSpec("conv", kernel=(k, k), stride=stride, out=out, padding=padding)


def pool() -> LayerSpec:
    return LayerSpec("maxpool", kernel=(2, 2), stride=2, padding="valid")


def fc(out: int) -> LayerSpec:
    return LayerSpec("dense", out=out)


def trace_shapes(specs: Sequence[LayerSpec], input_shape: Sequence[int]) -> List[Tuple[int, ...]]:
    """Shape after each layer of ``specs``, starting from an unbatched input shape."""
    shape = tuple(input_shape)
    trace = []
    for spec in specs:
        if spec.kind == "conv":
            h, w, _ = shape
            kh, kw = spec.kernel
            shape = (
                ops.conv_output_size(h, kh, spec.stride, spec.padding),
                ops.conv_output_size(w, kw, spec.stride, spec.padding),
                spec.out,
            )
        elif spec.kind == "maxpool":
            h, w, c = shape
            shape = (h // 2, w // 2, c)
        elif spec.kind == "dense":
            shape = (spec.out,)
        elif spec.kind == "reshape":
            if int(np.prod(spec.shape)) != int(np.prod(shape)):
                raise ShapeError(f"cannot reshape {shape} to {spec.shape}")
            shape = tuple(spec.shape)
        elif spec.kind == "concat":
            raise ValueError("concat joins branches; trace each branch separately")
        trace.append(shape)
    return trace


class Conv2D:
    def __init__(self, w: Tensor, b: Tensor, stride: int, padding: str):
        self.w, self.b, self.stride, self.padding = w, b, stride, padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.w, self.b, self.stride, self.padding)


class Dense:
    def __init__(self, w: Tensor, b: Tensor):
        self.w, self.b = w, b

    def __call__(self, x: Tensor) -> Tensor:
        return ops.dense(x, self.w, self.b)


class Network:
    """Ordered collection of named parameters plus a recorded forward graph.

    Subclasses build their layers through :meth:`conv_layer` / :meth:`dense_layer`
    and implement ``forward``; the last output that depends on parameters is
    stored so that :meth:`backward` can route an upstream gradient into the
    parameter ``grad`` buffers.
    """

    prefix = "net"

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: Dict[str, Tensor] = {}
        self.training = False
        self._recorded: Optional[Tensor] = None

    # construction helpers

    def _param(self, name: str, data: np.ndarray) -> Tensor:
        full = f"{self.prefix}.{name}"
        t = Tensor(np.asarray(data, dtype=self.dtype), requires_grad=True, name=full)
        self.params[full] = t
        return t

    def conv_layer(self, name, k, cin, cout, stride, padding, rng, std) -> Conv2D:
        w = self._param(f"{name}.w", rng.normal(0.0, std, size=(k, k, cin, cout)))
        b = self._param(f"{name}.b", np.zeros(cout))
        return Conv2D(w, b, stride, padding)

    def dense_layer(self, name, nin, nout, rng, std) -> Dense:
        w = self._param(f"{name}.w", rng.normal(0.0, std, size=(nin, nout)))
        b = self._param(f"{name}.b", np.zeros(nout))
        return Dense(w, b)

    # mode

    def train(self, mode: bool = True) -> "Network":
        self.training = mode
        return self

    def eval(self) -> "Network":
        return self.train(False)

    # autograd plumbing

    def record(self, out: Tensor) -> Tensor:
        self._recorded = out if out.requires_grad else None
        return out

    def backward(self, grad_output) -> Dict[str, np.ndarray]:
        """Backpropagate ``grad_output`` (d loss / d last output) into the parameters.

        Returns the parameter gradients keyed by name. Gradients accumulate
        across calls until :meth:`zero_grad`.
        """
        if self._recorded is None:
            raise GraphError("backward called without a preceding forward pass")
        out, self._recorded = self._recorded, None
        backward(out, np.asarray(grad_output, dtype=self.dtype))
        return self.grads()

    def grads(self) -> Dict[str, np.ndarray]:
        return {
            name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in self.params.items()
        }

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    # state

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        unexpected = set(state) - set(self.params)
        if missing or unexpected:
            raise ShapeError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, p in self.params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data[...] = arr
        self.on_weights_changed()

    def on_weights_changed(self) -> None:
        """Hook for subclasses holding caches derived from the weights."""

    def astype(self, dtype) -> "Network":
        self.dtype = np.dtype(dtype)
        for p in self.params.values():
            p.data = p.data.astype(self.dtype)
            p.grad = None
        self.on_weights_changed()
        return self

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name, p in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def save(self, path) -> None:
        from .serialization import save_weights

        save_weights(self.state_dict(), path)

    def load(self, path) -> "Network":
        from .serialization import load_weights

        state = load_weights(path, expected={k: p.shape for k, p in self.params.items()})
        self.load_state_dict({k: state[k] for k in self.params})
        return self


def parameter_arrays(params: Iterable[Tensor]) -> List[np.ndarray]:
    return [p.data for p in params]
