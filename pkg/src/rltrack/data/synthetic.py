"""Deterministic synthetic tracking sequences.

A textured target moves over a cluttered background (linear or random-walk
motion, bouncing off the canvas edges) among optional moving distractors.
Perturbations are scheduled over frame ranges:

* ``occlusion``: a foreign patch riding on the target, covering at least
  ``magnitude`` of its area;
* ``illumination``: global gain ``magnitude``;
* ``blur``: box filter of side ``magnitude`` pixels;
* ``scale-drift``: target size multiplied by ``magnitude`` per frame.

Trajectories are computed up front; pixels are rendered lazily per frame from
``(seed, frame)`` so a sequence costs almost no memory until it is read.
Rendered values are quantised to multiples of 1/255, which makes the 8-bit
PNG round trip lossless.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Tuple

import cv2
import numpy as np

from ..boxes import BoundingBox
from . import textures
from .sequences import LazyFrames, Sequence

MOTIONS = ("linear", "random-walk")
PERTURBATIONS = ("occlusion", "illumination", "blur", "scale-drift")


@dataclass(frozen=True)
class Perturbation:
    start: int
    stop: int  # exclusive
    kind: str
    magnitude: float

    def __post_init__(self):
        if self.kind not in PERTURBATIONS:
            raise ValueError(f"unknown perturbation {self.kind!r}")
        if not 0 <= self.start < self.stop:
            raise ValueError(f"bad perturbation range [{self.start}, {self.stop})")

    def active(self, t: int) -> bool:
        return self.start <= t < self.stop


@dataclass(frozen=True)
class SyntheticSpec:
    length: int = 100
    canvas: Tuple[int, int] = (240, 240)  # (H, W)
    target_size: Tuple[float, float] = (40.0, 40.0)  # (w, h)
    motion: str = "linear"
    velocity: Tuple[float, float] = (1.0, 0.0)  # px/frame for linear motion
    max_step: Tuple[float, float] = (2.0, 2.0)  # per-frame displacement bound for random walk
    start: Optional[Tuple[float, float]] = None  # initial centre; canvas centre when omitted
    distractors: int = 0
    perturbations: Tuple[Perturbation, ...] = ()
    texture_seed: Optional[int] = None
    noise: float = 0.01

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("length must be >= 1")
        if self.motion not in MOTIONS:
            raise ValueError(f"unknown motion model {self.motion!r}")
        for p in self.perturbations:
            if p.stop > self.length:
                raise ValueError(f"perturbation range [{p.start}, {p.stop}) exceeds length {self.length}")


# spec files


def _floats(v: str) -> Tuple[float, ...]:
    return tuple(float(x) for x in v.replace(",", " ").split())


def parse_spec(text: str) -> SyntheticSpec:
    """Parse ``key = value`` lines; ``perturbation = START:STOP KIND MAGNITUDE`` may repeat."""
    fields: dict = {}
    perts: List[Perturbation] = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        try:
            if key == "perturbation":
                rng_part, kind, mag = value.split()
                a, b = rng_part.split(":")
                perts.append(Perturbation(int(a), int(b), kind, float(mag)))
            elif key in ("length", "distractors", "texture_seed"):
                fields[key] = int(value)
            elif key == "canvas":
                h, w = _floats(value)
                fields[key] = (int(h), int(w))
            elif key in ("target_size", "velocity", "max_step", "start"):
                a, b = _floats(value)
                fields[key] = (a, b)
            elif key == "noise":
                fields[key] = float(value)
            elif key == "motion":
                fields[key] = value
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as e:
            raise ValueError(f"line {n}: {e}") from None
    return SyntheticSpec(perturbations=tuple(perts), **fields)


def load_spec(path) -> SyntheticSpec:
    return parse_spec(Path(path).read_text())


def format_spec(spec: SyntheticSpec) -> str:
    lines = [
        f"length = {spec.length}",
        f"canvas = {spec.canvas[0]},{spec.canvas[1]}",
        f"target_size = {spec.target_size[0]!r},{spec.target_size[1]!r}",
        f"motion = {spec.motion}",
        f"velocity = {spec.velocity[0]!r},{spec.velocity[1]!r}",
        f"max_step = {spec.max_step[0]!r},{spec.max_step[1]!r}",
        f"distractors = {spec.distractors}",
        f"noise = {spec.noise!r}",
    ]
    if spec.start is not None:
        lines.append(f"start = {spec.start[0]!r},{spec.start[1]!r}")
    if spec.texture_seed is not None:
        lines.append(f"texture_seed = {spec.texture_seed}")
    lines += [f"perturbation = {p.start}:{p.stop} {p.kind} {p.magnitude!r}" for p in spec.perturbations]
    return "\n".join(lines) + "\n"


# trajectories


def _walk(
    rng: np.random.Generator,
    length: int,
    start: np.ndarray,
    sizes: np.ndarray,
    canvas_wh: np.ndarray,
    motion: str,
    velocity,
    max_step,
) -> np.ndarray:
    """Centres (length, 2) as (x, y); velocity components reflect at the canvas edges."""
    bound = np.asarray(max_step, dtype=np.float64)
    pos = np.empty((length, 2))
    pos[0] = start
    v = np.asarray(velocity, dtype=np.float64).copy()
    if motion == "random-walk":
        v = rng.uniform(-bound, bound)
    for t in range(1, length):
        if motion == "random-walk":
            v = np.clip(0.8 * v + rng.normal(0.0, 0.5, 2) * bound, -bound, bound)
        p = pos[t - 1] + v
        half = sizes[t] / 2.0
        lo, hi = half, canvas_wh - half
        for k in range(2):
            if p[k] < lo[k] or p[k] > hi[k]:
                v[k] = -v[k]
                p[k] = np.clip(pos[t - 1][k] + v[k], lo[k], hi[k])
        pos[t] = p
    return pos


@dataclass
class _Plan:
    """Everything needed to render any frame, fixed at construction."""

    spec: SyntheticSpec
    seed: int
    background: np.ndarray
    texture: np.ndarray
    rects: np.ndarray  # (L, 4) integer x0, y0, w, h of the pasted target
    distractor_textures: List[np.ndarray]
    distractor_rects: np.ndarray  # (D, L, 4)
    occluders: List[Tuple[Perturbation, np.ndarray, int]] = field(default_factory=list)  # texture, side code

    def occluder_rect(self, pert: Perturbation, side: int, t: int) -> Tuple[int, int, int, int]:
        """Occluding band over one side of the target, overhanging by a margin."""
        x0, y0, w, h = self.rects[t]
        m = float(np.clip(pert.magnitude, 0.0, 1.0))
        if side in (0, 1):  # top / bottom band
            bh = int(np.ceil(m * h))
            bw = int(np.ceil(w * 1.2))
            bx = x0 - (bw - w) // 2
            by = y0 if side == 0 else y0 + h - bh
            return bx, by, bw, bh
        bw = int(np.ceil(m * w))
        bh = int(np.ceil(h * 1.2))
        by = y0 - (bh - h) // 2
        bx = x0 if side == 2 else x0 + w - bw
        return bx, by, bw, bh

    def render(self, t: int) -> np.ndarray:
        spec = self.spec
        frame = self.background.copy()
        for tex, rects in zip(self.distractor_textures, self.distractor_rects):
            x0, y0, w, h = rects[t]
            _paste_rect(frame, tex, x0, y0, w, h)
        x0, y0, w, h = self.rects[t]
        _paste_rect(frame, self.texture, x0, y0, w, h)
        for pert, tex, side in self.occluders:
            if pert.active(t):
                _paste_rect(frame, tex, *self.occluder_rect(pert, side, t))
        for p in spec.perturbations:
            if not p.active(t):
                continue
            if p.kind == "illumination":
                frame *= np.float32(p.magnitude)
            elif p.kind == "blur":
                k = max(1, int(round(p.magnitude)))
                frame = cv2.blur(frame, (k, k))
        if spec.noise > 0:
            noise_rng = np.random.default_rng([self.seed, 7919, t])
            frame += np.float32(spec.noise) * noise_rng.standard_normal(frame.shape, dtype=np.float32)
        np.clip(frame, 0.0, 1.0, out=frame)
        return np.round(frame * 255.0).astype(np.float32) / np.float32(255.0)


def _paste_rect(canvas: np.ndarray, texture: np.ndarray, x0: int, y0: int, w: int, h: int) -> None:
    if w < 1 or h < 1:
        return
    patch = textures.resize(texture, h, w)
    textures.paste(canvas, patch, y0 + h / 2.0, x0 + w / 2.0)


def _sizes(spec: SyntheticSpec) -> np.ndarray:
    """Per-frame (w, h) after scale drift, as floats."""
    sizes = np.empty((spec.length, 2))
    cur = np.asarray(spec.target_size, dtype=np.float64)
    drifts = [p for p in spec.perturbations if p.kind == "scale-drift"]
    for t in range(spec.length):
        if t > 0:
            for p in drifts:
                if p.active(t):
                    cur = cur * p.magnitude
        sizes[t] = cur
    return sizes


def gen_synthetic_sequence(spec: SyntheticSpec, seed: int = 0, name: Optional[str] = None) -> Sequence:
    H, W = spec.canvas
    tw, th = spec.target_size
    if tw < 2 or th < 2:
        raise ValueError("target must be at least 2x2 pixels")
    if tw > W or th > H:
        raise ValueError(f"target {tw}x{th} larger than canvas {W}x{H}")
    rng = np.random.default_rng([seed, 17])
    tex_rng = np.random.default_rng([spec.texture_seed if spec.texture_seed is not None else seed, 29])

    sizes = _sizes(spec)
    if np.any(sizes[:, 0] > W) or np.any(sizes[:, 1] > H):
        raise ValueError("scale drift grows the target beyond the canvas")
    if np.any(sizes < 2):
        raise ValueError("scale drift shrinks the target below 2 pixels")
    canvas_wh = np.array([W, H], dtype=np.float64)
    start = np.array(spec.start if spec.start is not None else (W / 2.0, H / 2.0), dtype=np.float64)
    centres = _walk(rng, spec.length, start, sizes, canvas_wh, spec.motion, spec.velocity, spec.max_step)

    wh = np.maximum(np.rint(sizes), 1).astype(int)
    x0 = np.rint(centres[:, 0] - wh[:, 0] / 2.0).astype(int)
    y0 = np.rint(centres[:, 1] - wh[:, 1] / 2.0).astype(int)
    rects = np.stack([x0, y0, wh[:, 0], wh[:, 1]], axis=1)

    background = textures.background(tex_rng, H, W)
    texture = textures.object_texture(tex_rng, 96, 96)

    d_textures, d_rects = [], []
    for _ in range(spec.distractors):
        scale = tex_rng.uniform(0.8, 1.2)
        dsize = np.tile(np.asarray(spec.target_size) * scale, (spec.length, 1))
        dstart = rng.uniform(dsize[0] / 2.0, canvas_wh - dsize[0] / 2.0)
        dpos = _walk(rng, spec.length, dstart, dsize, canvas_wh, "random-walk", (0, 0), spec.max_step)
        dwh = np.maximum(np.rint(dsize), 1).astype(int)
        d_rects.append(
            np.stack(
                [np.rint(dpos[:, 0] - dwh[:, 0] / 2).astype(int), np.rint(dpos[:, 1] - dwh[:, 1] / 2).astype(int), dwh[:, 0], dwh[:, 1]],
                axis=1,
            )
        )
        d_textures.append(textures.object_texture(tex_rng, 96, 96))

    occluders = [
        (p, textures.object_texture(tex_rng, 96, 96), int(rng.integers(4)))
        for p in spec.perturbations
        if p.kind == "occlusion"
    ]
    plan = _Plan(
        spec,
        seed,
        background,
        texture,
        rects,
        d_textures,
        np.array(d_rects).reshape(len(d_rects), spec.length, 4),
        occluders,
    )
    gt = [BoundingBox.from_corner(float(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in rects]
    seq = Sequence(LazyFrames(plan.render, spec.length), gt, name or f"synthetic-{seed}")
    seq.plan = plan  # kept for inspection (occluder geometry in tests and demos)
    return seq


def occlusion_fraction(plan: _Plan, t: int) -> float:
    """Fraction of the target rectangle covered by active occluders at frame ``t``."""
    x0, y0, w, h = plan.rects[t]
    mask = np.zeros((h, w), dtype=bool)
    for pert, _, side in plan.occluders:
        if not pert.active(t):
            continue
        ox, oy, ow, oh = plan.occluder_rect(pert, side, t)
        xa, ya = max(ox, x0) - x0, max(oy, y0) - y0
        xb, yb = min(ox + ow, x0 + w) - x0, min(oy + oh, y0 + h) - y0
        if xa < xb and ya < yb:
            mask[ya:yb, xa:xb] = True
    return float(mask.mean())


# suites


def random_spec(
    rng: np.random.Generator,
    length: int = 200,
    occlusions: int = 3,
    distractors: Tuple[int, int] = (1, 3),
    canvas: Tuple[int, int] = (240, 240),
) -> SyntheticSpec:
    """A random-walk sequence with several persistent occlusions and mild nuisances."""
    side = rng.uniform(32, 48)
    aspect = np.exp(rng.uniform(np.log(0.75), np.log(1.33)))
    size = (float(side * np.sqrt(aspect)), float(side / np.sqrt(aspect)))
    perts: List[Perturbation] = []
    for _ in range(occlusions):
        dur = int(rng.integers(5, 31))
        start = int(rng.integers(1, max(2, length - dur)))
        perts.append(Perturbation(start, min(length, start + dur), "occlusion", float(rng.uniform(0.4, 0.8))))
    if rng.random() < 0.5:
        dur = int(rng.integers(10, 40))
        start = int(rng.integers(1, max(2, length - dur)))
        perts.append(Perturbation(start, min(length, start + dur), "illumination", float(rng.uniform(0.6, 1.4))))
    if rng.random() < 0.3:
        dur = int(rng.integers(5, 20))
        start = int(rng.integers(1, max(2, length - dur)))
        perts.append(Perturbation(start, min(length, start + dur), "blur", 3.0))
    return SyntheticSpec(
        length=length,
        canvas=canvas,
        target_size=size,
        motion="random-walk",
        max_step=(2.5, 2.5),
        distractors=int(rng.integers(distractors[0], distractors[1] + 1)),
        perturbations=tuple(sorted(perts, key=lambda p: p.start)),
    )


SPLITS = {"eval": 101, "train": 202}


def synthetic_suite(n: int, seed: int, length: int = 200, occlusions: int = 3, split: str = "eval") -> List[Sequence]:
    """``n`` occlusion-heavy random sequences.

    The ``train`` and ``eval`` splits draw from disjoint random streams, so
    no training sequence reappears at evaluation time for any seed.
    """
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    out = []
    for i in range(n):
        rng = np.random.default_rng([seed, i, SPLITS[split]])
        spec = random_spec(rng, length=length, occlusions=occlusions)
        out.append(gen_synthetic_sequence(spec, seed=int(rng.integers(2**31)), name=f"{split}{seed}-{i:02d}"))
    return out
