"""Per-frame tracking loop: match every template, pick one, refine scale and position.

One frame proceeds as:

1. crop a search image around the previous box and compute a prediction map
   for each pool template (N matcher passes);
2. choose a template (policy greedy/sampled, or a baseline rule);
3. scale pyramid: two extra crops at 1.05 and 1/1.05 with the chosen template,
   keep the scale whose map peaks highest (ties keep the current size);
4. four crops shifted by 20% of the box width/height; the mean of their
   peak locations becomes the new centre;
5. every K frames append the current box crop to the template pool.

``Tracker.frame_steps`` is written as a generator that yields batches of
(template, search) matcher requests and receives the maps back. This lets
:func:`run_lockstep` advance many trackers at once and push all their matcher
work through one batched call per stage; ``Tracker.track_frame`` drives a
single tracker directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Generator, Iterable, List, Optional, Sequence, Tuple

import cv2
import numpy as np

from .boxes import BoundingBox
from .matching import MAP_CENTER, MAP_SIZE, SEARCH_SIZE, TEMPLATE_SIZE, MatchingNet, peak_cell
from .policy import PolicyNet, PolicyScores, greedy_action, sample_action
from .pool import Template, TemplatePool

MODES = ("rl", "sample", "ml", "rand", "single")


@dataclass(frozen=True)
class TrackerConfig:
    pool_capacity: int = 4
    update_interval: int = 50
    retain_initial: bool = True
    scale_step: float = 1.05
    shift_fraction: float = 0.2
    context: float = 2.0  # search side = context * max(w, h)
    mode: str = "rl"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.pool_capacity < 1 or self.update_interval < 1:
            raise ValueError("pool_capacity and update_interval must be >= 1")

    @property
    def scales(self) -> Tuple[float, float, float]:
        return (self.scale_step, 1.0, 1.0 / self.scale_step)


@dataclass(eq=False)
class SearchPatch:
    pixels: np.ndarray  # 120x120x3
    cx: float
    cy: float
    side: float  # crop side length in frame pixels
    embedding: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class FrameResult:
    box: BoundingBox
    chosen_template: int
    chosen_scale: float
    score: float
    maps: np.ndarray  # (N, 31, 31), one per pool template, at scale 1.0
    normalized: Optional[np.ndarray] = None  # policy distribution when the policy was consulted


# cropping


def crop_resized(frame: np.ndarray, cx: float, cy: float, w: float, h: float, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resample of the frame region centred at (cx, cy) with size (w, h).

    Frame pixel (i, j) covers [j, j+1) x [i, i+1); areas outside the frame
    read as zero.
    """
    ax, ay = w / out_w, h / out_h
    m = np.array(
        [[ax, 0.0, cx - w / 2.0 + 0.5 * ax - 0.5], [0.0, ay, cy - h / 2.0 + 0.5 * ay - 0.5]],
        dtype=np.float64,
    )
    return cv2.warpAffine(
        np.ascontiguousarray(frame, dtype=np.float32),
        m,
        (out_w, out_h),
        flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=0,
    )


def crop_search(
    frame: np.ndarray, box: BoundingBox, scale: float = 1.0, context: float = 2.0, center: Optional[Tuple[float, float]] = None
) -> SearchPatch:
    """Square crop of side ``context * max(w, h) * scale`` around the box, resized to 120x120."""
    if not (box.w > 0 and box.h > 0):
        raise ValueError("degenerate box")
    cx, cy = center if center is not None else (box.cx, box.cy)
    side = context * max(box.w, box.h) * scale
    return SearchPatch(crop_resized(frame, cx, cy, side, side, SEARCH_SIZE, SEARCH_SIZE), cx, cy, side)


def crop_template(frame: np.ndarray, box: BoundingBox) -> np.ndarray:
    """The box region resized to 48x48."""
    return crop_resized(frame, box.cx, box.cy, box.w, box.h, TEMPLATE_SIZE, TEMPLATE_SIZE)


def localize(map_: np.ndarray, patch: SearchPatch) -> Tuple[float, float]:
    """Frame (x, y) of the map peak: centre + (cell - 15) * side / 31 on each axis."""
    r, c = peak_cell(map_)
    step = patch.side / MAP_SIZE
    return patch.cx + (c - MAP_CENTER) * step, patch.cy + (r - MAP_CENTER) * step


def select_template(
    maps: np.ndarray, policy: Optional[PolicyNet], mode: str, rng: Optional[np.random.Generator] = None
) -> Tuple[int, float, Optional[np.ndarray]]:
    """Return ``(index, score, normalized policy scores or None)``.

    ``rl`` is greedy on the policy, ``sample`` draws from it; ``ml`` takes the
    map with the greatest maximum; ``rand`` draws uniformly. With a single
    map the index is 0 and no policy is consulted.
    """
    n = len(maps)
    if n == 1 or mode == "single":
        return 0, float(maps[0].max()), None
    if mode in ("rl", "sample"):
        scores = PolicyScores.from_raw(policy.raw_scores(maps))
        if mode == "rl":
            a = greedy_action(scores)
        else:
            a = sample_action(scores, rng)
        return a, float(scores.raw[a]), scores.normalized
    peaks = maps.reshape(n, -1).max(axis=1)
    if mode == "ml":
        a = int(np.argmax(peaks))
    elif mode == "rand":
        a = int(rng.integers(n))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return a, float(peaks[a]), None


# matcher batching


Request = List[Tuple[Template, SearchPatch]]


class MatcherService:
    """Runs batched matcher requests, caching template and search embeddings."""

    def __init__(self, matcher: MatchingNet):
        self.matcher = matcher

    def _template_embeddings(self, templates: Sequence[Template]) -> None:
        key = id(self.matcher)
        todo = [t for t in templates if t.embedding is None or t.embedding[0] != key]
        todo = list({id(t): t for t in todo}.values())
        if todo:
            embs = self.matcher.embed_templates(np.stack([t.patch for t in todo]))
            for t, e in zip(todo, embs):
                t.embedding = (key, e)

    def _search_embeddings(self, patches: Sequence[SearchPatch]) -> None:
        todo = list({id(p): p for p in patches if p.embedding is None}.values())
        if todo:
            embs = self.matcher.embed_searches(np.stack([p.pixels for p in todo]))
            for p, e in zip(todo, embs):
                p.embedding = e

    def run_many(self, requests: Sequence[Request]) -> List[np.ndarray]:
        flat = [pair for req in requests for pair in req]
        if not flat:
            return [np.zeros((0, MAP_SIZE, MAP_SIZE)) for _ in requests]
        self._template_embeddings([t for t, _ in flat])
        self._search_embeddings([s for _, s in flat])
        maps = self.matcher.head(np.stack([t.embedding[1] for t, _ in flat]), np.stack([s.embedding for _, s in flat]))
        out, start = [], 0
        for req in requests:
            out.append(maps[start : start + len(req)])
            start += len(req)
        return out

    def run(self, request: Request) -> np.ndarray:
        return self.run_many([request])[0]


# tracker


class Tracker:
    def __init__(
        self,
        matcher: MatchingNet,
        policy: Optional[PolicyNet],
        config: TrackerConfig = TrackerConfig(),
        rng: Optional[np.random.Generator] = None,
    ):
        if config.mode in ("rl", "sample") and policy is None:
            raise ValueError(f"mode {config.mode!r} needs a policy network")
        if config.mode in ("sample", "rand") and rng is None:
            raise ValueError(f"mode {config.mode!r} needs an rng")
        self.matcher = matcher
        self.policy = policy
        self.config = config
        self.rng = rng
        self.service = MatcherService(matcher)
        self.pool: Optional[TemplatePool] = None
        self.box: Optional[BoundingBox] = None
        self.frame_idx = 0

    def initialize(self, frame: np.ndarray, box: BoundingBox) -> None:
        cfg = self.config
        capacity = 1 if cfg.mode == "single" else cfg.pool_capacity
        self.pool = TemplatePool(crop_template(frame, box), capacity, cfg.update_interval, cfg.retain_initial)
        self.box = box
        self.frame_idx = 0

    def frame_steps(self, frame: np.ndarray) -> Generator[Request, np.ndarray, FrameResult]:
        if self.pool is None:
            raise RuntimeError("tracker not initialised")
        cfg = self.config
        box = self.box
        templates = self.pool.templates()

        search = crop_search(frame, box, 1.0, cfg.context)
        maps = yield [(t, search) for t in templates]
        choice, score, normalized = select_template(maps, self.policy, cfg.mode, self.rng)
        chosen = templates[choice]

        up, _, down = cfg.scales
        extra = [crop_search(frame, box, s, cfg.context) for s in (up, down)]
        extra_maps = yield [(chosen, p) for p in extra]
        # ties keep the current size: 1.0 is checked first and only beaten strictly
        candidates = [(1.0, maps[choice]), (up, extra_maps[0]), (down, extra_maps[1])]
        best_scale, best_peak = 1.0, float(maps[choice].max())
        for s, m in candidates[1:]:
            if float(m.max()) > best_peak:
                best_scale, best_peak = s, float(m.max())
        sized = box.scaled(best_scale)

        dx, dy = cfg.shift_fraction * sized.w, cfg.shift_fraction * sized.h
        centres = [(sized.cx + dx, sized.cy), (sized.cx - dx, sized.cy), (sized.cx, sized.cy + dy), (sized.cx, sized.cy - dy)]
        shifted = [crop_search(frame, sized, 1.0, cfg.context, center=c) for c in centres]
        shift_maps = yield [(chosen, p) for p in shifted]
        estimates = np.array([localize(m, p) for m, p in zip(shift_maps, shifted)])
        x, y = estimates.mean(axis=0)
        new_box = sized.moved_to(float(x), float(y))

        self.frame_idx += 1
        self.box = new_box
        if cfg.mode != "single":
            self.pool.maybe_update(self.frame_idx, crop_template(frame, new_box))
        return FrameResult(new_box, choice, best_scale, score, np.asarray(maps), normalized)

    def track_frame(self, frame: np.ndarray) -> FrameResult:
        steps = self.frame_steps(frame)
        request = next(steps)
        while True:
            try:
                request = steps.send(self.service.run(request))
            except StopIteration as done:
                return done.value


def run_lockstep(
    matcher: MatchingNet, jobs: Sequence[Tuple[Tracker, Iterable[np.ndarray]]]
) -> List[List[FrameResult]]:
    """Advance several initialised trackers frame by frame, batching their matcher calls.

    Each job is ``(tracker, frames)`` where ``frames`` start after the
    initialisation frame. Results are identical to running each tracker on
    its own; only the batching differs.
    """
    service = MatcherService(matcher)
    iters = [iter(frames) for _, frames in jobs]
    results: List[List[FrameResult]] = [[] for _ in jobs]
    active = list(range(len(jobs)))
    while active:
        gens: Dict[int, Generator] = {}
        pending: Dict[int, Request] = {}
        still = []
        for j in active:
            frame = next(iters[j], None)
            if frame is None:
                continue
            still.append(j)
            gens[j] = jobs[j][0].frame_steps(frame)
            pending[j] = next(gens[j])
        active = still
        while gens:
            keys = list(gens)
            answers = service.run_many([pending[k] for k in keys])
            for k, ans in zip(keys, answers):
                try:
                    pending[k] = gens[k].send(ans)
                except StopIteration as done:
                    results[k].append(done.value)
                    del gens[k]
    return results


def track_sequence(
    frames: Sequence[np.ndarray],
    init_box: BoundingBox,
    matcher: MatchingNet,
    policy: Optional[PolicyNet],
    config: TrackerConfig = TrackerConfig(),
    seed: Optional[int] = None,
) -> List[BoundingBox]:
    """Boxes for every frame; the first is ``init_box`` itself."""
    if len(frames) == 0:
        raise ValueError("empty sequence")
    rng = np.random.default_rng(seed) if seed is not None else None
    tracker = Tracker(matcher, policy, config, rng)
    tracker.initialize(frames[0], init_box)
    return [init_box] + [tracker.track_frame(f).box for f in frames[1:]]
