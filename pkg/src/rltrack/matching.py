"""Siamese matching network: 48x48 template + 120x120 search image -> 31x31 map.

Both streams share one convolutional trunk::

    conv7/3-16 -> pool -> relu -+-> conv3/1-32 -> pool -> relu -> conv3/1-64 -> pool -> relu
                                +-> conv1/1-4 -> relu                              (skip branch)

Each stream's main and skip features are flattened and concatenated; the
template (512) and search (3200) vectors are joined into 3712 features that
feed fc-2048, fc-2048 and fc-961 with a sigmoid, reshaped to 31x31.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, List, Optional, Sequence

import numpy as np

from .nn import layers as L
from .nn import ops
from .nn.optim import Adam
from .nn.tensor import ShapeError, Tensor

logger = logging.getLogger(__name__)

TEMPLATE_SIZE = 48
SEARCH_SIZE = 120
MAP_SIZE = 31
MAP_CENTER = MAP_SIZE // 2
CELL_PIXELS = SEARCH_SIZE / MAP_SIZE  # search-image pixels per map cell
TARGET_SIGMA = 2.0
FC_KEEP_PROB = 0.8
INPUT_MEAN = 0.5

TRUNK_SPEC = [L.conv(7, 3, 16), L.pool(), L.LayerSpec("relu")]
MAIN_SPEC = [L.conv(3, 1, 32), L.pool(), L.LayerSpec("relu"), L.conv(3, 1, 64), L.pool(), L.LayerSpec("relu")]
SKIP_SPEC = [L.conv(1, 1, 4), L.LayerSpec("relu")]
HEAD_SPEC = [
    L.fc(2048),
    L.LayerSpec("relu"),
    L.LayerSpec("dropout", keep_prob=FC_KEEP_PROB),
    L.fc(2048),
    L.LayerSpec("relu"),
    L.LayerSpec("dropout", keep_prob=FC_KEEP_PROB),
    L.fc(MAP_SIZE * MAP_SIZE),
    L.LayerSpec("sigmoid"),
    L.LayerSpec("reshape", shape=(MAP_SIZE, MAP_SIZE)),
]


def stream_feature_size(side: int) -> int:
    """Flattened main + skip feature length for a square input of ``side`` pixels."""
    trunk = L.trace_shapes(TRUNK_SPEC, (side, side, 3))[-1]
    main = L.trace_shapes(MAIN_SPEC, trunk)[-1]
    skip = L.trace_shapes(SKIP_SPEC, trunk)[-1]
    return int(np.prod(main) + np.prod(skip))


TEMPLATE_FEATURES = stream_feature_size(TEMPLATE_SIZE)
SEARCH_FEATURES = stream_feature_size(SEARCH_SIZE)


def _batched(x: np.ndarray, side: int, what: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != (side, side, 3):
        raise ShapeError(f"{what} must be {side}x{side}x3 (optionally batched), got {x.shape}")
    return x


class MatchingNet(L.Network):
    prefix = "match"

    def __init__(self, rng: Optional[np.random.Generator] = None, init_std=0.1, dtype=np.float32):
        """``init_std`` is a fixed Gaussian std, or ``"fan_in"`` for std sqrt(2 / fan_in)
        (sqrt(1 / fan_in) on the output layer)."""
        super().__init__(dtype)
        rng = rng if rng is not None else np.random.default_rng(0)

        def std(fan_in, gain=2.0):
            if isinstance(init_std, str):
                if init_std != "fan_in":
                    raise ValueError(f"unknown init {init_std!r}")
                return float(np.sqrt(gain / fan_in))
            return float(init_std)

        self.conv1 = self.conv_layer("conv1", 7, 3, 16, 3, "same", rng, std(7 * 7 * 3))
        self.conv2 = self.conv_layer("conv2", 3, 16, 32, 1, "same", rng, std(3 * 3 * 16))
        self.conv3 = self.conv_layer("conv3", 3, 32, 64, 1, "same", rng, std(3 * 3 * 32))
        self.skip = self.conv_layer("skip", 1, 16, 4, 1, "same", rng, std(16))
        nin = TEMPLATE_FEATURES + SEARCH_FEATURES
        self.fc1 = self.dense_layer("fc1", nin, 2048, rng, std(nin))
        self.fc2 = self.dense_layer("fc2", 2048, 2048, rng, std(2048))
        self.fc3 = self.dense_layer("fc3", 2048, MAP_SIZE * MAP_SIZE, rng, std(2048, 1.0))
        self.invocations = 0

    # graph

    def _input(self, images: np.ndarray) -> Tensor:
        # pixels in [0, 1] are centred on zero before the first convolution
        return Tensor(np.asarray(images, dtype=self.dtype) - self.dtype.type(INPUT_MEAN), dtype=self.dtype)

    def stream(self, x: Tensor) -> Tensor:
        """Shared trunk for one Siamese stream; returns flattened (main, skip) features."""
        c1 = ops.relu(ops.maxpool2x2(self.conv1(x)))
        main = ops.relu(ops.maxpool2x2(self.conv2(c1)))
        main = ops.relu(ops.maxpool2x2(self.conv3(main)))
        skip = ops.relu(self.skip(c1))
        return ops.concat([ops.flatten(main), ops.flatten(skip)], axis=1)

    def forward_logits(self, template, search, rng: Optional[np.random.Generator] = None) -> Tensor:
        """Pre-sigmoid scores (B, 961). Records the graph for :meth:`backward`."""
        t = _batched(template, TEMPLATE_SIZE, "template")
        s = _batched(search, SEARCH_SIZE, "search")
        if t.shape[0] != s.shape[0]:
            raise ShapeError(f"batch sizes differ: {t.shape[0]} templates, {s.shape[0]} searches")
        self.invocations += t.shape[0]
        feats = ops.concat([self.stream(self._input(t)), self.stream(self._input(s))], axis=1)
        h = ops.dropout(ops.relu(self.fc1(feats)), FC_KEEP_PROB, self.training, rng)
        h = ops.dropout(ops.relu(self.fc2(h)), FC_KEEP_PROB, self.training, rng)
        return self.record(self.fc3(h))

    def forward(self, template, search, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Prediction maps (B, 31, 31), or (31, 31) for unbatched inputs."""
        single = np.asarray(template).ndim == 3
        z = self.forward_logits(template, search, rng)
        maps = ops.sigmoid_array(z.data).reshape(-1, MAP_SIZE, MAP_SIZE)
        return maps[0] if single else maps

    # inference fast path: fc1 splits into a template part and a search part

    def on_weights_changed(self) -> None:
        pass

    def embed_templates(self, templates) -> np.ndarray:
        """Template contribution to fc1, (B, 2048). Fixed for a template's lifetime."""
        t = _batched(templates, TEMPLATE_SIZE, "template")
        feats = self.stream(self._input(t)).data
        return feats @ self.fc1.w.data[:TEMPLATE_FEATURES]

    def embed_searches(self, searches) -> np.ndarray:
        """Search contribution to fc1 including the bias, (B, 2048)."""
        s = _batched(searches, SEARCH_SIZE, "search")
        out = []
        for i in range(0, s.shape[0], 32):
            feats = self.stream(self._input(s[i : i + 32])).data
            out.append(feats @ self.fc1.w.data[TEMPLATE_FEATURES:] + self.fc1.b.data)
        return np.concatenate(out, axis=0)

    def head(self, template_emb: np.ndarray, search_emb: np.ndarray) -> np.ndarray:
        """Maps (B, 31, 31) for paired embeddings; one matcher invocation per row."""
        template_emb = np.atleast_2d(template_emb)
        search_emb = np.atleast_2d(search_emb)
        self.invocations += template_emb.shape[0]
        h = np.maximum(template_emb + search_emb, 0)
        h = np.maximum(h @ self.fc2.w.data + self.fc2.b.data, 0)
        z = h @ self.fc3.w.data + self.fc3.b.data
        return ops.sigmoid_array(z).reshape(-1, MAP_SIZE, MAP_SIZE)

    def match(self, template: np.ndarray, search: np.ndarray) -> np.ndarray:
        """Single-pair inference map (dropout off, no graph recorded)."""
        return self.head(self.embed_templates(template), self.embed_searches(search))[0]


def build_matching_net(seed: int = 0, init_std=0.1) -> MatchingNet:
    return MatchingNet(np.random.default_rng(seed), init_std=init_std)


# targets, losses, offset mapping


def gaussian_target_map(offset_cells, sigma: float = TARGET_SIGMA) -> np.ndarray:
    """31x31 Gaussian label peaked (value exactly 1) at ``center + offset_cells``.

    ``offset_cells`` is ``(di, dj)``: row (vertical) then column displacement.
    """
    di, dj = offset_cells
    pi, pj = MAP_CENTER + di, MAP_CENTER + dj
    if not (0 <= pi < MAP_SIZE and 0 <= pj < MAP_SIZE):
        raise ValueError(f"peak cell ({pi}, {pj}) lies outside the {MAP_SIZE}x{MAP_SIZE} map")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    i = np.arange(MAP_SIZE)[:, None]
    j = np.arange(MAP_SIZE)[None, :]
    return np.exp(-((i - pi) ** 2 + (j - pj) ** 2) / (2.0 * sigma**2))


def pixels_to_cells(d_px):
    return np.asarray(d_px, dtype=float) / CELL_PIXELS


def cells_to_pixels(d_cells):
    return np.asarray(d_cells, dtype=float) * CELL_PIXELS


def peak_cell(map_: np.ndarray) -> tuple:
    """Row/column of the maximum; ties resolve to the first in row-major order."""
    flat = int(np.argmax(map_))
    return divmod(flat, map_.shape[-1])


_BCE_CLAMP = 1e-7


def matching_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean per-cell binary cross-entropy of probabilities ``pred`` against ``target``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    if np.any(target < 0) or np.any(target > 1):
        raise ValueError("target values must lie in [0, 1]")
    p = np.clip(pred, _BCE_CLAMP, 1 - _BCE_CLAMP)
    return float(np.mean(-(target * np.log(p) + (1 - target) * np.log1p(-p))))


def matching_loss_logits(logits: np.ndarray, target: np.ndarray):
    """BCE from pre-sigmoid scores; returns ``(loss, d loss / d logits)``.

    Logits are clamped to [-30, 30] for the value; the gradient is the exact
    ``(sigmoid(z) - target) / n``.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64).reshape(z.shape)
    if np.any(y < 0) or np.any(y > 1):
        raise ValueError("target values must lie in [0, 1]")
    zc = np.clip(z, -30.0, 30.0)
    loss = np.mean(np.maximum(zc, 0) - zc * y + np.log1p(np.exp(-np.abs(zc))))
    p = 1.0 / (1.0 + np.exp(-zc))
    return float(loss), (p - y) / z.size


# training


@dataclass
class MatchTrainingPair:
    template: np.ndarray  # 48x48x3
    search: np.ndarray  # 120x120x3
    target: np.ndarray  # 31x31
    offset_px: tuple = (0.0, 0.0)  # (dy, dx) of the target centre from the search centre


@dataclass
class MatchTrainingLog:
    losses: List[float]
    seconds: float

    def decile_means(self) -> tuple:
        n = max(1, len(self.losses) // 10)
        return float(np.mean(self.losses[:n])), float(np.mean(self.losses[-n:]))


def _batches(pairs: Iterable[MatchTrainingPair], batch_size: int) -> Iterator[List[MatchTrainingPair]]:
    batch = []
    for p in pairs:
        batch.append(p)
        if len(batch) == batch_size:
            yield batch
            batch = []
    if batch:
        yield batch


def train_matching(
    net: MatchingNet,
    pairs: Iterable[MatchTrainingPair],
    steps: int,
    batch_size: int = 64,
    learning_rate: float = 1e-4,
    rng: Optional[np.random.Generator] = None,
    callback: Optional[Callable[[int, float], None]] = None,
) -> MatchTrainingLog:
    """Supervised pretraining with Adam on (template, search, Gaussian map) pairs.

    ``pairs`` must yield at least ``steps * batch_size`` pairs (use a cycling
    dataset for several epochs). With ``steps == 0`` the network is untouched.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    losses: List[float] = []
    start = time.perf_counter()
    if steps <= 0:
        return MatchTrainingLog(losses, 0.0)
    opt = Adam(net.parameters(), learning_rate=learning_rate)
    net.train()
    stream = _batches(pairs, batch_size)
    try:
        for step in range(steps):
            try:
                batch = next(stream)
            except StopIteration:
                if step == 0:
                    raise ValueError("pair stream is empty") from None
                raise ValueError(f"pair stream exhausted after {step} steps") from None
            t = np.stack([p.template for p in batch])
            s = np.stack([p.search for p in batch])
            y = np.stack([p.target for p in batch]).reshape(len(batch), -1)
            net.zero_grad()
            z = net.forward_logits(t, s, rng)
            loss, dz = matching_loss_logits(z.data, y)
            net.backward(dz)
            opt.step()
            losses.append(loss)
            if callback is not None:
                callback(step, loss)
    finally:
        net.eval()
        net.on_weights_changed()
    return MatchTrainingLog(losses, time.perf_counter() - start)


def localization_hits(net: MatchingNet, pairs: Sequence[MatchTrainingPair], radius: float = 2.0) -> np.ndarray:
    """Per pair: is the map peak within ``radius`` cells of the true offset?"""
    hits = []
    for i in range(0, len(pairs), 64):
        chunk = pairs[i : i + 64]
        t = np.stack([p.template for p in chunk])
        s = np.stack([p.search for p in chunk])
        maps = net.head(net.embed_templates(t), net.embed_searches(s))
        for p, m in zip(chunk, maps):
            r, c = peak_cell(m)
            true = pixels_to_cells(p.offset_px) + MAP_CENTER
            hits.append(np.hypot(r - true[0], c - true[1]) <= radius)
    return np.array(hits)
