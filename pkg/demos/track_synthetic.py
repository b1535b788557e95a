"""Track one synthetic sequence and compare template-selection modes.

Without a weights file a matcher is pretrained briefly first (a few minutes),
which is enough to follow a slow target but not much more.

    python demos/track_synthetic.py [matcher.rdtw] [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from rltrack.config import MatcherConfig
from rltrack.data.otb import write_otb_sequence
from rltrack.data.synthetic import SyntheticSpec, gen_synthetic_sequence
from rltrack.metrics import iou
from rltrack.pipeline import load_networks, pretrain_matcher
from rltrack.tracker import Tracker, TrackerConfig


def track(matcher, seq, mode):
    rng = np.random.default_rng(0)
    tracker = Tracker(matcher, None, TrackerConfig(mode=mode, update_interval=20), rng)
    tracker.initialize(seq.frames[0], seq.ground_truth[0])
    return [iou(tracker.track_frame(seq.frames[t]).box, seq.ground_truth[t]) for t in range(1, len(seq.ground_truth))]


def main(weights=None, out=None):
    if weights:
        matcher, _ = load_networks([Path(weights)])
    else:
        matcher, log = pretrain_matcher(MatcherConfig(matcher_steps=150, matcher_pairs=9600), seed=0)
        print(f"pretrained matcher: loss {log.losses[0]:.3f} -> {log.losses[-1]:.3f}")

    spec = SyntheticSpec(length=120, canvas=(240, 240), motion="random-walk", distractors=2)
    seq = gen_synthetic_sequence(spec, seed=3, name="demo")
    if out:
        write_otb_sequence(seq, Path(out) / seq.name)
        print(f"wrote frames and groundtruth_rect.txt to {Path(out) / seq.name}")

    for mode in ("single", "ml", "rand"):
        ious = np.array(track(matcher, seq, mode))
        print(f"{mode:6s}  mean IoU {ious.mean():.3f}  frames with IoU > 0.5: {np.mean(ious > 0.5):.2f}")


if __name__ == "__main__":
    main(*sys.argv[1:3])
