"""Procedural appearance generators for synthetic targets and backgrounds."""

from __future__ import annotations

import colorsys

import cv2
import numpy as np


def _saturated_color(rng: np.random.Generator, sat=(0.55, 1.0), val=(0.45, 1.0)) -> np.ndarray:
    h = rng.random()
    s = rng.uniform(*sat)
    v = rng.uniform(*val)
    return np.array(colorsys.hsv_to_rgb(h, s, v), dtype=np.float32)


def _coarse_noise(rng: np.random.Generator, h: int, w: int, cells: int) -> np.ndarray:
    grid = rng.random((cells, cells)).astype(np.float32)
    return cv2.resize(grid, (w, h), interpolation=cv2.INTER_CUBIC)


def _pattern_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    yy /= h
    xx /= w
    kind = rng.integers(4)
    if kind == 0:  # stripes
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(1.5, 4.0)
        m = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + rng.uniform(0, 2 * np.pi))
    elif kind == 1:  # checker
        n = rng.integers(2, 5)
        m = ((np.floor(xx * n) + np.floor(yy * n)) % 2).astype(np.float32)
    elif kind == 2:  # blobs
        m = _coarse_noise(rng, h, w, int(rng.integers(3, 6)))
        m = (m - m.min()) / (np.ptp(m) + 1e-6)
    else:  # rings
        cy, cx = rng.uniform(0.3, 0.7, size=2)
        r = np.hypot(yy - cy, xx - cx)
        m = 0.5 + 0.5 * np.cos(2 * np.pi * rng.uniform(2.0, 4.0) * r)
    return np.clip(m, 0, 1).astype(np.float32)


def object_texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """High-contrast two-colour patterned patch (h, w, 3) in [0, 1]."""
    c1 = _saturated_color(rng)
    c2 = _saturated_color(rng, val=(0.1, 0.6))
    m = _pattern_mask(rng, h, w)[..., None]
    tex = m * c1 + (1 - m) * c2
    tex += 0.02 * rng.standard_normal(tex.shape, dtype=np.float32)
    return np.clip(tex, 0, 1).astype(np.float32)


def background(rng: np.random.Generator, h: int, w: int, clutter: int = 6) -> np.ndarray:
    """Muted low-frequency background with a few faint clutter rectangles."""
    base = _saturated_color(rng, sat=(0.0, 0.35), val=(0.3, 0.7))
    img = np.empty((h, w, 3), dtype=np.float32)
    for ch in range(3):
        img[..., ch] = base[ch] + 0.25 * (_coarse_noise(rng, h, w, int(rng.integers(4, 9))) - 0.5)
    for _ in range(clutter):
        ch, cw = rng.integers(h // 16, h // 5 + 1), rng.integers(w // 16, w // 5 + 1)
        y, x = rng.integers(0, h - ch + 1), rng.integers(0, w - cw + 1)
        color = _saturated_color(rng, sat=(0.0, 0.5), val=(0.2, 0.8))
        alpha = rng.uniform(0.2, 0.5)
        img[y : y + ch, x : x + cw] = (1 - alpha) * img[y : y + ch, x : x + cw] + alpha * color
    img += 0.015 * rng.standard_normal(img.shape, dtype=np.float32)
    return np.clip(img, 0, 1)


def resize(img: np.ndarray, h: int, w: int) -> np.ndarray:
    interp = cv2.INTER_AREA if (h < img.shape[0] or w < img.shape[1]) else cv2.INTER_LINEAR
    return cv2.resize(img, (int(w), int(h)), interpolation=interp)


def paste(canvas: np.ndarray, patch: np.ndarray, cy: float, cx: float) -> tuple:
    """Paste ``patch`` centred at (cy, cx) with integer alignment; clips at borders.

    Returns the pasted region as ``(y0, x0, y1, x1)`` in canvas coordinates.
    """
    ph, pw = patch.shape[:2]
    y0 = int(round(cy - ph / 2.0))
    x0 = int(round(cx - pw / 2.0))
    H, W = canvas.shape[:2]
    ya, xa = max(y0, 0), max(x0, 0)
    yb, xb = min(y0 + ph, H), min(x0 + pw, W)
    if ya < yb and xa < xb:
        canvas[ya:yb, xa:xb] = patch[ya - y0 : yb - y0, xa - x0 : xb - x0]
    return y0, x0, y0 + ph, x0 + pw
