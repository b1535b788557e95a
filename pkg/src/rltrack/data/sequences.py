"""Tracking sequences: lazily materialised frames plus per-frame ground truth."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence as Seq

import numpy as np

from ..boxes import BoundingBox

MIN_EPISODE = 30
MAX_EPISODE = 300


class LazyFrames:
    """Read-only list of frames produced on demand by ``render(index)``.

    Keeps only a small cache, so long sequences never sit in memory at once.
    Slicing returns another ``LazyFrames`` sharing the same renderer.
    """

    def __init__(self, render: Callable[[int], np.ndarray], indices, cache_size: int = 8):
        self._render = render
        self._indices = range(indices) if isinstance(indices, int) else indices
        self._cache: dict = {}
        self._cache_size = cache_size

    def __len__(self) -> int:
        return len(self._indices)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return LazyFrames(self._render, self._indices[i], self._cache_size)
        src = self._indices[i]
        frame = self._cache.get(src)
        if frame is None:
            frame = self._render(src)
            frame.setflags(write=False)
            if len(self._cache) >= self._cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[src] = frame
        return frame

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


@dataclass
class Sequence:
    frames: Seq[np.ndarray]  # HxWx3 float32 in [0, 1]
    ground_truth: List[BoundingBox]
    name: str = "sequence"

    def __post_init__(self):
        if len(self.frames) < 1:
            raise ValueError("a sequence needs at least one frame")
        if len(self.frames) != len(self.ground_truth):
            raise ValueError(f"{len(self.frames)} frames but {len(self.ground_truth)} boxes")

    def __len__(self) -> int:
        return len(self.frames)

    def slice(self, start: int, length: int, name: Optional[str] = None) -> "Sequence":
        if start < 0 or length < 1 or start + length > len(self):
            raise IndexError(f"slice [{start}, {start + length}) outside sequence of {len(self)}")
        return Sequence(
            self.frames[start : start + length],
            list(self.ground_truth[start : start + length]),
            name or f"{self.name}[{start}:{start + length}]",
        )


@dataclass(frozen=True)
class EpisodeSlice:
    sequence: int  # index into the pool
    start: int
    length: int

    def __post_init__(self):
        if not MIN_EPISODE <= self.length <= MAX_EPISODE:
            raise ValueError(f"episode length {self.length} outside [{MIN_EPISODE}, {MAX_EPISODE}]")

    def take(self, pool: Seq[Sequence]) -> Sequence:
        return pool[self.sequence].slice(self.start, self.length)


def sample_episode(
    pool: Seq[Sequence],
    rng: np.random.Generator,
    min_length: int = MIN_EPISODE,
    max_length: int = MAX_EPISODE,
) -> EpisodeSlice:
    """Uniform sequence, start and length; length clamped to what remains after the start."""
    eligible = [i for i, s in enumerate(pool) if len(s) >= min_length]
    if not eligible:
        raise ValueError(f"no sequence has at least {min_length} frames")
    idx = eligible[int(rng.integers(len(eligible)))]
    n = len(pool[idx])
    start = int(rng.integers(0, n - min_length + 1))
    hi = min(max_length, n - start)
    length = int(rng.integers(min_length, hi + 1))
    return EpisodeSlice(idx, start, length)
