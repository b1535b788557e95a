"""Line-oriented ``key = value`` run configuration.

One flat namespace covers the tracker, policy training, matcher pretraining
and synthetic-suite parameters. ``pool_capacity`` and ``update_interval``
apply to both the tracker and the training rollouts.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Tuple

from .trainer import TrainConfig
from .tracker import TrackerConfig


@dataclass(frozen=True)
class MatcherConfig:
    matcher_pairs: int = 50_000
    matcher_steps: int = 780
    matcher_batch: int = 64
    matcher_learning_rate: float = 1e-3
    matcher_init: str = "fan_in"  # "fan_in" or a numeric Gaussian std


@dataclass(frozen=True)
class SuiteConfig:
    suite_size: int = 20
    suite_length: int = 200
    suite_occlusions: int = 3
    intervals: Tuple[int, ...] = (20, 40, 50, 80, 100, 150, 200, 300)


@dataclass
class RunConfig:
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    matcher: MatcherConfig = field(default_factory=MatcherConfig)
    suite: SuiteConfig = field(default_factory=SuiteConfig)


class ConfigError(ValueError):
    pass


def _coerce(raw: str, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(int(v) for v in raw.replace(",", " ").split())
    return raw


def parse_config(text: str) -> RunConfig:
    sections = {"tracker": TrackerConfig(), "train": TrainConfig(), "matcher": MatcherConfig(), "suite": SuiteConfig()}
    known = {name: {f.name: f for f in fields(obj)} for name, obj in sections.items()}
    updates = {name: {} for name in sections}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        hits = [s for s in sections if key in known[s]]
        if not hits:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        for s in hits:
            try:
                updates[s][key] = _coerce(value, getattr(sections[s], key))
            except ValueError as e:
                raise ConfigError(f"line {n}: bad value for {key}: {e}") from None
    try:
        return RunConfig(
            replace(sections["tracker"], **updates["tracker"]),
            replace(sections["train"], **updates["train"]),
            replace(sections["matcher"], **updates["matcher"]),
            replace(sections["suite"], **updates["suite"]),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def matcher_init(cfg: MatcherConfig):
    return cfg.matcher_init if cfg.matcher_init == "fan_in" else float(cfg.matcher_init)
