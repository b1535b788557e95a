"""Synthetic (template, search, Gaussian map) pairs for matcher pretraining."""

from __future__ import annotations

from typing import Iterator, List

import cv2
import numpy as np

from ..matching import (
    MAP_CENTER,
    SEARCH_SIZE,
    TEMPLATE_SIZE,
    MatchTrainingPair,
    gaussian_target_map,
    pixels_to_cells,
)
from . import textures

# A tracked target fills half of the search crop (crop side = 2 x target side).
TARGET_SIDE = SEARCH_SIZE / 2
MAX_OFFSET_PX = 28.0


def _jitter_appearance(rng: np.random.Generator, img: np.ndarray) -> np.ndarray:
    out = img * np.float32(rng.uniform(0.85, 1.15))
    if rng.random() < 0.25:
        out = cv2.blur(out, (3, 3))
    out += 0.02 * rng.standard_normal(out.shape, dtype=np.float32)
    return np.clip(out, 0, 1, out=out)


def make_pair(rng: np.random.Generator, max_offset_px: float = MAX_OFFSET_PX) -> MatchTrainingPair:
    """One pair: a textured target planted at a uniform random offset among distractors."""
    side = TARGET_SIDE * rng.uniform(0.85, 1.15)
    aspect = np.exp(rng.uniform(np.log(0.7), np.log(1.4)))
    th, tw = (side, side / aspect) if aspect > 1 else (side * aspect, side)
    th, tw = int(round(th)), int(round(tw))

    canvas = textures.background(rng, SEARCH_SIZE, SEARCH_SIZE)
    for _ in range(rng.choice(3, p=[0.3, 0.4, 0.3])):
        dh, dw = (int(round(v * rng.uniform(0.8, 1.2))) for v in (th, tw))
        textures.paste(canvas, textures.object_texture(rng, dh, dw), *rng.uniform(0, SEARCH_SIZE, size=2))

    target = textures.object_texture(rng, th, tw)
    dy, dx = rng.uniform(-max_offset_px, max_offset_px, size=2)
    c = SEARCH_SIZE / 2.0
    textures.paste(canvas, target, c + dy, c + dx)
    search = _jitter_appearance(rng, canvas)
    template = _jitter_appearance(rng, textures.resize(target, TEMPLATE_SIZE, TEMPLATE_SIZE))
    cells = np.rint(pixels_to_cells((dy, dx))).astype(int)
    cells = np.clip(cells, -MAP_CENTER, MAP_CENTER)
    return MatchTrainingPair(template, search, gaussian_target_map(tuple(cells)), (float(dy), float(dx)))


def gen_matching_pairs(n: int, rng: np.random.Generator) -> List[MatchTrainingPair]:
    if n < 1:
        raise ValueError("n must be >= 1")
    return [make_pair(rng) for _ in range(n)]


class PairDataset:
    """``n`` pairs, each regenerated on demand from ``(seed, index)``.

    Iterating cycles over the pairs forever in a per-epoch shuffled order, so
    a fixed-size corpus can feed any number of training steps without holding
    every image in memory.
    """

    def __init__(self, n: int, seed: int = 0):
        if n < 1:
            raise ValueError("n must be >= 1")
        self.n, self.seed = n, seed

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> MatchTrainingPair:
        if not 0 <= i < self.n:
            raise IndexError(i)
        return make_pair(np.random.default_rng([self.seed, i]))

    def __iter__(self) -> Iterator[MatchTrainingPair]:
        epoch = 0
        while True:
            order = np.random.default_rng([self.seed, 1_000_003, epoch]).permutation(self.n)
            for i in order:
                yield self[int(i)]
            epoch += 1
