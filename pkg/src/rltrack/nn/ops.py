"""Differentiable operations on NHWC tensors.

Every op accepts :class:`Tensor` inputs, returns a new ``Tensor`` and, when
any input requires a gradient, records a closure that routes the upstream
gradient back to the inputs. Image tensors are ``(batch, height, width,
channels)``; a 3-D ``(H, W, C)`` input is treated as a batch of one.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, needs_grad

PADDING_MODES = ("same", "valid")


class _SwitchTape:
    """Records ReLU masks and pool winners, or replays them in the same order."""

    def __init__(self):
        self.entries = []
        self.replay = False
        self.cursor = 0

    def use(self, computed: np.ndarray) -> np.ndarray:
        if not self.replay:
            self.entries.append(computed)
            return computed
        stored = self.entries[self.cursor]
        self.cursor += 1
        if stored.shape != computed.shape:
            raise ShapeError("frozen switch pattern does not match this forward pass")
        return stored


_switch_tape: "_SwitchTape | None" = None


@contextmanager
def frozen_switches(tape: "_SwitchTape | None" = None):
    """Within the block, ReLU and max-pool decisions are recorded on a fresh
    tape, or replayed from ``tape`` when one is given. Replaying makes the
    forward pass a smooth function of its inputs around the recorded point."""
    global _switch_tape
    prev = _switch_tape
    if tape is None:
        tape = _SwitchTape()
    else:
        tape.replay, tape.cursor = True, 0
    _switch_tape = tape
    try:
        yield tape
    finally:
        _switch_tape = prev


def _make(data, parents, backward_fn) -> Tensor:
    if needs_grad(*parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn)
    return Tensor(data)


def conv_output_size(size: int, kernel: int, stride: int, padding: str) -> int:
    """Spatial output length of a convolution or pooling window."""
    if padding == "same":
        return math.ceil(size / stride)
    if padding == "valid":
        if size < kernel:
            raise ShapeError(f"input size {size} smaller than kernel {kernel} under valid padding")
        return (size - kernel) // stride + 1
    raise ValueError(f"unknown padding mode {padding!r}")


def _same_padding(size: int, kernel: int, stride: int) -> tuple:
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: str = "same") -> Tensor:
    """2-D cross-correlation of ``x`` (B,H,W,C) with kernel ``w`` (kh,kw,C,F).

    Uses zero padding for ``"same"`` (TensorFlow convention: output size
    ``ceil(H/stride)``, padding split with the extra pixel after).
    """
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if padding not in PADDING_MODES:
        raise ValueError(f"unknown padding mode {padding!r}")
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects (B,H,W,C) input and (kh,kw,C,F) kernel, got {x.shape} and {w.shape}")
    B, H, W, C = xd.shape
    kh, kw, kc, F = w.data.shape
    if kc != C:
        raise ShapeError(f"input has {C} channels but kernel expects {kc}")
    if b is not None and b.data.shape != (F,):
        raise ShapeError(f"bias shape {b.shape} does not match {F} filters")

    if padding == "same":
        pt, pb = _same_padding(H, kh, stride)
        pl, pr = _same_padding(W, kw, stride)
    else:
        pt = pb = pl = pr = 0
    Ho = conv_output_size(H, kh, stride, padding)
    Wo = conv_output_size(W, kw, stride, padding)
    xp = np.pad(xd, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else xd

    # window axes reordered to (kh, kw, C) so the copy matches the kernel layout
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :Ho, :Wo]
    cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3)).reshape(B * Ho * Wo, kh * kw * C)
    wmat = w.data.reshape(kh * kw * C, F)
    out = cols @ wmat
    if b is not None:
        out += b.data
    out = out.reshape(B, Ho, Wo, F)
    if squeeze:
        out = out[0]

    parents = (x, w) if b is None else (x, w, b)

    def _backward(g: np.ndarray) -> None:
        gflat = g.reshape(B * Ho * Wo, F)
        if w.requires_grad:
            dw = (cols.T @ gflat).reshape(kh, kw, C, F)
            w.accumulate(dw)
        if b is not None and b.requires_grad:
            b.accumulate(gflat.sum(axis=0))
        if x.requires_grad:
            dcols = (gflat @ wmat.T).reshape(B, Ho, Wo, kh, kw, C)
            dxp = np.zeros(xp.shape, dtype=xp.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i : i + stride * Ho : stride, j : j + stride * Wo : stride, :] += dcols[:, :, :, i, j, :]
            dx = dxp[:, pt : pt + H, pl : pl + W, :]
            x.accumulate(dx[0] if squeeze else dx)

    return _make(out, parents, _backward)


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; a trailing odd row/column is dropped."""
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    B, H, W, C = xd.shape
    if H < 2 or W < 2:
        raise ShapeError(f"maxpool2x2 needs spatial dims >= 2, got {H}x{W}")
    Ho, Wo = H // 2, W // 2
    blocks = xd[:, : 2 * Ho, : 2 * Wo].reshape(B, Ho, 2, Wo, 2, C).transpose(0, 1, 3, 5, 2, 4).reshape(B, Ho, Wo, C, 4)
    idx = blocks.argmax(axis=-1)[..., None]
    if _switch_tape is not None:
        idx = _switch_tape.use(idx)
    out = np.take_along_axis(blocks, idx, axis=-1)[..., 0]
    if squeeze:
        out = out[0]

    def _backward(g: np.ndarray) -> None:
        gd = g[None] if squeeze else g
        routed = np.zeros((B, Ho, Wo, C, 4), dtype=xd.dtype)
        np.put_along_axis(routed, idx, gd[..., None], axis=-1)
        routed = routed.reshape(B, Ho, Wo, C, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(B, 2 * Ho, 2 * Wo, C)
        dx = np.zeros_like(xd)
        dx[:, : 2 * Ho, : 2 * Wo] = routed
        x.accumulate(dx[0] if squeeze else dx)

    return _make(out, (x,), _backward)


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Fully connected layer: ``x @ w + b`` for ``x`` of shape (B, N)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weights {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"dense: bias {b.shape} incompatible with weights {w.shape}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def _backward(g: np.ndarray) -> None:
        if w.requires_grad:
            w.accumulate(x.data.T @ g)
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=0))
        if x.requires_grad:
            x.accumulate(g @ w.data.T)

    return _make(out, parents, _backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    if _switch_tape is not None:
        mask = _switch_tape.use(mask)
    out = x.data * mask

    def _backward(g: np.ndarray) -> None:
        x.accumulate(g * mask)

    return _make(out, (x,), _backward)


def sigmoid_array(z: np.ndarray) -> np.ndarray:
    """Overflow-free logistic function, clipped to the open interval (0, 1)."""
    e = np.exp(-np.abs(z))
    s = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype, copy=False)
    tiny = np.finfo(z.dtype).eps
    return np.clip(s, tiny, 1.0 - tiny)


def sigmoid(x: Tensor) -> Tensor:
    s = sigmoid_array(x.data)

    def _backward(g: np.ndarray) -> None:
        x.accumulate(g * s * (1.0 - s))

    return _make(s, (x,), _backward)


def dropout(x: Tensor, keep_prob: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/keep_prob`` at train time."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
    if not training or keep_prob == 1.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout requires an rng")
    mask = (rng.random(x.shape) < keep_prob).astype(x.dtype) / np.asarray(keep_prob, dtype=x.dtype)
    out = x.data * mask

    def _backward(g: np.ndarray) -> None:
        x.accumulate(g * mask)

    return _make(out, (x,), _backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    arrays = [t.data for t in tensors]
    out = np.concatenate(arrays, axis=axis)
    bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def _backward(g: np.ndarray) -> None:
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            if t.requires_grad:
                t.accumulate(piece)

    return _make(out, tuple(tensors), _backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)

    def _backward(g: np.ndarray) -> None:
        x.accumulate(g.reshape(x.shape))

    return _make(out, (x,), _backward)


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading batch axis (row-major, HWC order)."""
    return reshape(x, (x.shape[0], -1))
