"""Overlap metrics and success curves."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .boxes import BoundingBox

THRESHOLDS = np.round(np.arange(21) * 0.05, 2)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    # rounding can push identical boxes a hair above 1
    return min(1.0, float(inter / union))


@dataclass(frozen=True)
class SuccessCurve:
    thresholds: np.ndarray
    success_rate: np.ndarray
    frames: int

    @property
    def auc(self) -> float:
        return auc(self)


def success_curve(ious: Sequence[float]) -> SuccessCurve:
    """Fraction of frames with IoU strictly above each of 21 thresholds 0, 0.05, ..., 1."""
    v = np.asarray(ious, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ValueError("success_curve needs at least one IoU value")
    rates = (v[None, :] > THRESHOLDS[:, None]).mean(axis=1)
    return SuccessCurve(THRESHOLDS.copy(), rates, int(v.size))


def auc(curve: SuccessCurve) -> float:
    return float(np.mean(curve.success_rate))
