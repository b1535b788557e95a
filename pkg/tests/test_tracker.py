import numpy as np
import pytest

from rltrack.boxes import BoundingBox
from rltrack.data.synthetic import SyntheticSpec, gen_synthetic_sequence
from rltrack.metrics import iou
from rltrack.policy import build_policy_net
from rltrack.tracker import (
    FrameResult,
    SearchPatch,
    Tracker,
    TrackerConfig,
    crop_search,
    crop_template,
    localize,
    run_lockstep,
    select_template,
    track_sequence,
)


def textured_frame(h=240, w=240, seed=0):
    rng = np.random.default_rng(seed)
    return rng.random((h, w, 3)).astype(np.float32)


# cropping


def test_unit_scale_crop_has_no_resampling():
    frame = textured_frame()
    patch = crop_search(frame, BoundingBox(120, 120, 60, 60))
    assert patch.side == 120 and patch.pixels.shape == (120, 120, 3)
    np.testing.assert_allclose(patch.pixels, frame[60:180, 60:180], atol=1e-6)


def test_corner_crop_zero_padded():
    frame = np.ones((240, 240, 3), dtype=np.float32)
    patch = crop_search(frame, BoundingBox(10, 10, 40, 40))
    assert patch.pixels.shape == (120, 120, 3)
    assert np.all(patch.pixels[:20, :20] == 0)
    assert np.all(patch.pixels[-10:, -10:] == 1)


def test_scaled_crop_side():
    patch = crop_search(textured_frame(), BoundingBox(120, 120, 60, 60), scale=1.05)
    assert patch.side == pytest.approx(126.0)
    assert patch.pixels.shape == (120, 120, 3)


def test_crop_uses_longer_side():
    assert crop_search(textured_frame(), BoundingBox(120, 120, 30, 50)).side == 100


def test_degenerate_box_rejected():
    with pytest.raises(ValueError):
        BoundingBox(10, 10, 0, 5)


def test_template_crop_shape():
    frame = textured_frame()
    t = crop_template(frame, BoundingBox(100, 100, 48, 48))
    np.testing.assert_allclose(t, frame[76:124, 76:124], atol=1e-6)


# localisation


def _map_with_peak(r, c):
    m = np.full((31, 31), 0.1)
    m[r, c] = 0.9
    return m


def test_localize_center_peak():
    p = SearchPatch(np.zeros((120, 120, 3)), 50.0, 70.0, 120.0)
    assert localize(_map_with_peak(15, 15), p) == (50.0, 70.0)


def test_localize_offset_peak():
    p = SearchPatch(np.zeros((120, 120, 3)), 50.0, 70.0, 120.0)
    x, y = localize(_map_with_peak(15, 21), p)
    assert x - 50 == pytest.approx(6 * 120 / 31) and x - 50 == pytest.approx(23.2, abs=0.05)
    assert y == 70.0


def test_localize_round_trip_with_target_map():
    from rltrack.matching import gaussian_target_map

    p = SearchPatch(np.zeros((120, 120, 3)), 0.0, 0.0, 120.0)
    for di, dj in [(3, -4), (-7, 2), (0, 9)]:
        x, y = localize(gaussian_target_map((di, dj)), p)
        assert abs(x / (120 / 31) - dj) <= 1 and abs(y / (120 / 31) - di) <= 1


# selection


def test_select_single_map():
    assert select_template(np.random.default_rng(0).random((1, 31, 31)), None, "rl")[0] == 0


def test_select_ml_takes_highest_peak():
    maps = np.stack([_map_with_peak(1, 1) * 0.5, _map_with_peak(2, 2), _map_with_peak(3, 3) * 0.9])
    assert select_template(maps, None, "ml")[0] == 1


def test_select_greedy_follows_policy():
    pol = build_policy_net(0)
    maps = np.random.default_rng(1).random((3, 31, 31)).astype(np.float32)
    raw = pol.raw_scores(maps)
    idx, score, norm = select_template(maps, pol, "rl")
    assert idx == int(np.argmax(raw)) and score == pytest.approx(raw[idx])
    np.testing.assert_allclose(norm, raw / raw.sum())


def test_select_sample_delegates_to_policy_distribution():
    pol = build_policy_net(0)
    maps = np.random.default_rng(1).random((2, 31, 31)).astype(np.float32)
    raw = pol.raw_scores(maps)
    rng = np.random.default_rng(2)
    draws = [select_template(maps, pol, "sample", rng)[0] for _ in range(4000)]
    assert np.mean(np.array(draws) == 0) == pytest.approx(raw[0] / raw.sum(), abs=0.03)


def test_rand_mode_reproducible():
    maps = np.random.default_rng(1).random((4, 31, 31))
    a = [select_template(maps, None, "rand", np.random.default_rng(5))[0] for _ in range(3)]
    b = [select_template(maps, None, "rand", np.random.default_rng(5))[0] for _ in range(3)]
    assert a == b


def test_unknown_mode():
    with pytest.raises(ValueError):
        TrackerConfig(mode="best")


# full frames with the correlation stand-in


def _static_sequence(length=12):
    spec = SyntheticSpec(length=length, target_size=(40, 40), velocity=(0, 0), noise=0.0)
    return gen_synthetic_sequence(spec, seed=3)


def test_identical_frames_keep_box(correlation_matcher):
    seq = _static_sequence()
    t = Tracker(correlation_matcher, None, TrackerConfig(mode="ml"))
    t.initialize(seq.frames[0], seq.ground_truth[0])
    for f in list(seq.frames)[1:]:
        res = t.track_frame(f)
    b, g = res.box, seq.ground_truth[0]
    assert abs(b.cx - g.cx) <= 2 and abs(b.cy - g.cy) <= 2


def test_static_target_prefers_unit_scale(correlation_matcher):
    seq = _static_sequence(30)
    t = Tracker(correlation_matcher, None, TrackerConfig(mode="single"))
    t.initialize(seq.frames[0], seq.ground_truth[0])
    scales = [t.track_frame(f).chosen_scale for f in list(seq.frames)[1:]]
    assert np.mean(np.array(scales) == 1.0) >= 0.9


def test_scale_tie_keeps_size():
    class Flat:
        invocations = 0

        def embed_templates(self, t):
            return np.zeros((len(t), 1))

        def embed_searches(self, s):
            return np.zeros((len(s), 1))

        def head(self, a, b):
            self.invocations += len(a)
            return np.full((len(a), 31, 31), 0.5)

    t = Tracker(Flat(), None, TrackerConfig(mode="single"))
    box = BoundingBox(120, 120, 40, 30)
    t.initialize(textured_frame(), box)
    res = t.track_frame(textured_frame(seed=1))
    assert res.chosen_scale == 1.0 and (res.box.w, res.box.h) == (40, 30)


def test_box_sizes_change_only_by_scale_factors(correlation_matcher):
    seq = gen_synthetic_sequence(SyntheticSpec(length=15, target_size=(40, 36), velocity=(1.5, -1.0)), seed=4)
    t = Tracker(correlation_matcher, None, TrackerConfig(mode="single"))
    t.initialize(seq.frames[0], seq.ground_truth[0])
    prev = seq.ground_truth[0]
    for f in list(seq.frames)[1:]:
        r = t.track_frame(f)
        assert r.chosen_scale in (1.05, 1.0, 1 / 1.05)
        assert r.box.w == pytest.approx(prev.w * r.chosen_scale) and r.box.h == pytest.approx(prev.h * r.chosen_scale)
        prev = r.box


def test_invocations_per_frame(correlation_matcher):
    seq = gen_synthetic_sequence(SyntheticSpec(length=12), seed=5)
    t = Tracker(correlation_matcher, None, TrackerConfig(mode="ml", update_interval=3))
    t.initialize(seq.frames[0], seq.ground_truth[0])
    for f in list(seq.frames)[1:]:
        n = len(t.pool)
        before = correlation_matcher.invocations
        t.track_frame(f)
        assert correlation_matcher.invocations - before == n + 6


def test_refinement_is_mean_of_four_shifts(correlation_matcher, monkeypatch):
    import rltrack.tracker as T

    calls = []
    real = T.localize

    def spy(m, p):
        xy = real(m, p)
        calls.append(xy)
        return xy

    monkeypatch.setattr(T, "localize", spy)
    seq = gen_synthetic_sequence(SyntheticSpec(length=3, velocity=(2, 1)), seed=6)
    t = Tracker(correlation_matcher, None, TrackerConfig(mode="single"))
    t.initialize(seq.frames[0], seq.ground_truth[0])
    res = t.track_frame(seq.frames[1])
    assert len(calls) == 4
    assert (res.box.cx, res.box.cy) == pytest.approx(tuple(np.mean(calls, axis=0)))


def test_frame_results_in_range(correlation_matcher):
    seq = gen_synthetic_sequence(SyntheticSpec(length=101, velocity=(0.5, 0.3)), seed=7)
    t = Tracker(correlation_matcher, None, TrackerConfig(mode="ml"))
    t.initialize(seq.frames[0], seq.ground_truth[0])
    results = [t.track_frame(f) for f in list(seq.frames)[1:]]
    assert len(results) == 100
    for r in results:
        assert isinstance(r, FrameResult)
        assert 0 <= r.chosen_template < len(r.maps) <= 4
        assert 0 < r.score < 1


def test_track_sequence_length_one(correlation_matcher):
    seq = _static_sequence(1)
    assert track_sequence(seq.frames, seq.ground_truth[0], correlation_matcher, None, TrackerConfig(mode="ml")) == [seq.ground_truth[0]]


def test_track_sequence_empty(correlation_matcher):
    with pytest.raises(ValueError):
        track_sequence([], BoundingBox(1, 1, 1, 1), correlation_matcher, None)


def test_track_sequence_deterministic(correlation_matcher):
    seq = gen_synthetic_sequence(SyntheticSpec(length=20, velocity=(1, 1)), seed=8)
    pol = build_policy_net(1)
    cfg = TrackerConfig(mode="rl", update_interval=5)
    a = track_sequence(seq.frames, seq.ground_truth[0], correlation_matcher, pol, cfg)
    b = track_sequence(seq.frames, seq.ground_truth[0], correlation_matcher, pol, cfg)
    assert a == b


def test_linear_motion_followed(correlation_matcher):
    seq = gen_synthetic_sequence(SyntheticSpec(length=40, velocity=(2, 1), start=(80, 90), distractors=0), seed=9)
    boxes = track_sequence(seq.frames, seq.ground_truth[0], correlation_matcher, None, TrackerConfig(mode="ml"))
    assert np.mean([iou(b, g) for b, g in zip(boxes, seq.ground_truth)]) >= 0.6


def test_single_pool_matches_policy_free_path(correlation_matcher):
    seq = gen_synthetic_sequence(SyntheticSpec(length=25, velocity=(1, 0)), seed=10)
    pol = build_policy_net(2)
    outs = {
        mode: track_sequence(seq.frames, seq.ground_truth[0], correlation_matcher, pol, TrackerConfig(mode=mode, pool_capacity=1), seed=1)
        for mode in ("rl", "ml", "rand", "single")
    }
    assert outs["rl"] == outs["ml"] == outs["rand"] == outs["single"]


def test_lockstep_equals_sequential(correlation_matcher):
    seqs = [gen_synthetic_sequence(SyntheticSpec(length=n, velocity=(1, -1)), seed=s) for n, s in ((8, 11), (14, 12), (5, 13))]
    cfg = TrackerConfig(mode="rand", update_interval=4)

    def fresh(seq, k):
        t = Tracker(correlation_matcher, None, cfg, np.random.default_rng(k))
        t.initialize(seq.frames[0], seq.ground_truth[0])
        return t

    together = run_lockstep(correlation_matcher, [(fresh(s, k), s.frames[1:]) for k, s in enumerate(seqs)])
    for k, s in enumerate(seqs):
        t = fresh(s, k)
        alone = [t.track_frame(f).box for f in s.frames[1:]]
        assert [r.box for r in together[k]] == alone


def test_greedy_path_uses_no_rng(correlation_matcher):
    seq = gen_synthetic_sequence(SyntheticSpec(length=10, velocity=(1, 0)), seed=14)
    t = Tracker(correlation_matcher, build_policy_net(0), TrackerConfig(mode="rl", update_interval=2), rng=None)
    t.initialize(seq.frames[0], seq.ground_truth[0])
    for f in list(seq.frames)[1:]:
        t.track_frame(f)
