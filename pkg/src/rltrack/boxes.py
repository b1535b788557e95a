"""Axis-aligned bounding boxes in centre convention."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class BoundingBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"degenerate box: w={self.w}, h={self.h}")

    @classmethod
    def from_corner(cls, x: float, y: float, w: float, h: float) -> "BoundingBox":
        return cls(x + w / 2.0, y + h / 2.0, w, h)

    def corner(self) -> tuple:
        """``(x, y, w, h)`` with (x, y) the top-left corner."""
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.w, self.h)

    def corners(self) -> tuple:
        """``(x0, y0, x1, y1)``."""
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.cx + self.w / 2.0, self.cy + self.h / 2.0)

    def moved_to(self, cx: float, cy: float) -> "BoundingBox":
        return BoundingBox(cx, cy, self.w, self.h)

    def scaled(self, s: float) -> "BoundingBox":
        return BoundingBox(self.cx, self.cy, self.w * s, self.h * s)

    @property
    def area(self) -> float:
        return self.w * self.h
