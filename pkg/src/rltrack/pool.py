"""Bounded template pool refreshed on a fixed frame interval."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np


@dataclass(eq=False)
class Template:
    patch: np.ndarray  # 48x48x3 in [0, 1]
    acquired_frame: int
    is_initial: bool = False
    # fc1 contribution cached by the matcher service; keyed by matcher identity
    embedding: Optional[Tuple[int, np.ndarray]] = field(default=None, repr=False)


class TemplatePool:
    """Ordered (oldest first) set of at most ``capacity`` templates.

    A new template is appended whenever the frame index is a positive
    multiple of ``interval``. On overflow the oldest template is evicted;
    with ``retain_initial`` the initial template is never the victim.
    """

    def __init__(self, initial: np.ndarray, capacity: int = 4, interval: int = 50, retain_initial: bool = True):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if interval < 1:
            raise ValueError("interval must be >= 1")
        self.capacity = capacity
        self.interval = interval
        self.retain_initial = retain_initial
        self._templates: List[Template] = [Template(initial, 0, is_initial=True)]
        self._last_frame = 0

    def __len__(self) -> int:
        return len(self._templates)

    def templates(self) -> Tuple[Template, ...]:
        return tuple(self._templates)

    def acquisition_frames(self) -> List[int]:
        return [t.acquired_frame for t in self._templates]

    def maybe_update(self, frame_idx: int, patch: np.ndarray) -> bool:
        """Add ``patch`` if ``frame_idx`` is on the update interval; returns whether the pool changed."""
        if frame_idx <= self._last_frame:
            raise ValueError(f"frame index must increase: got {frame_idx} after {self._last_frame}")
        self._last_frame = frame_idx
        if frame_idx % self.interval != 0:
            return False
        new = Template(patch, frame_idx)
        if len(self._templates) < self.capacity:
            self._templates.append(new)
            return True
        candidates = [i for i, t in enumerate(self._templates) if not (self.retain_initial and t.is_initial)]
        if not candidates:
            return False
        del self._templates[candidates[0]]
        self._templates.append(new)
        return True


def init_pool(initial: np.ndarray, capacity: int = 4, interval: int = 50, retain_initial: bool = True) -> TemplatePool:
    return TemplatePool(initial, capacity, interval, retain_initial)
