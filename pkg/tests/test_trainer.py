import numpy as np
import pytest

from rltrack.boxes import BoundingBox
from rltrack.data.synthetic import SyntheticSpec, gen_synthetic_sequence
from rltrack.policy import build_policy_net, log_policy, log_policy_gradient
from rltrack.trainer import (
    FAILURE,
    SUCCESS,
    BanditEnvironment,
    EpisodeSourceExhausted,
    Experience,
    ReplayMemory,
    Rollout,
    TrackingEnvironment,
    TrainConfig,
    accumulate_discounted,
    apply_episode_update,
    discount_weights,
    episode_gradient,
    evaluate_episode,
    outcome_from_ious,
    push_experiences,
    replay_gradient,
    replay_update,
    run_training_episode,
    train_policy,
)


def _maps(rng, n):
    return rng.random((n, 31, 31)).astype(np.float32)


# discounting


def test_discount_three_unit_steps():
    g = accumulate_discounted([{"p": np.array(1.0)}] * 3, 0.95)
    assert abs(float(g["p"]) - 2.8525) < 1e-9
    assert 0.95**2 + 0.95 + 1 == pytest.approx(2.8525, abs=1e-12)


def test_discount_one_is_plain_sum():
    steps = [{"p": np.array([1.0, -2.0]) * k} for k in range(1, 5)]
    np.testing.assert_allclose(accumulate_discounted(steps, 1.0)["p"], np.array([1.0, -2.0]) * 10)


def test_discount_weights_last_step_one():
    w = discount_weights(4, 0.5)
    np.testing.assert_allclose(w, [0.125, 0.25, 0.5, 1.0])


def test_batched_episode_gradient_equals_frame_by_frame():
    pol = build_policy_net(0).astype(np.float64)
    rng = np.random.default_rng(0)
    states = [_maps(rng, n).astype(np.float64) for n in (1, 2, 3, 4, 4)]
    actions = [0, 1, 2, 0, 3]
    ro = Rollout(states, actions, [1.0] * 5, SUCCESS)
    batched = episode_gradient(pol, ro, 0.95)
    per_frame = accumulate_discounted([log_policy_gradient(pol, [s], [a]) for s, a in zip(states, actions)], 0.95)
    for k in batched:
        np.testing.assert_allclose(batched[k], per_frame[k], atol=1e-6)


# episode outcome


@pytest.mark.parametrize(
    "tail, outcome",
    [([1.0] * 20, SUCCESS), ([0.0] * 20, FAILURE), ([0.4] * 10 + [0.0] * 10, SUCCESS), ([0.19] * 20, FAILURE)],
)
def test_outcome_rule(tail, outcome):
    assert outcome_from_ious([0.0] * 15 + tail) == outcome


def test_outcome_uses_only_last_window():
    assert outcome_from_ious([1.0] * 50 + [0.1] * 20) == FAILURE


def test_evaluate_episode_from_boxes():
    gt = [BoundingBox(10, 10, 4, 4)] * 25
    far = [BoundingBox(100, 100, 4, 4)] * 25
    assert evaluate_episode(gt, gt) == SUCCESS
    assert evaluate_episode(far, gt) == FAILURE
    with pytest.raises(ValueError):
        evaluate_episode(gt[:3], gt)


# signed updates


def test_zero_update_is_noop():
    pol = build_policy_net(1)
    before = pol.checksum()
    apply_episode_update(pol, {k: np.zeros(p.shape) for k, p in pol.params.items()}, SUCCESS)
    assert pol.checksum() == before


def test_success_then_failure_cancels():
    pol = build_policy_net(1).astype(np.float64)
    start = {k: v.copy() for k, v in pol.state_dict().items()}
    delta = {k: np.random.default_rng(2).normal(size=p.shape) for k, p in pol.params.items()}
    apply_episode_update(pol, delta, SUCCESS)
    apply_episode_update(pol, delta, FAILURE)
    for k, v in pol.state_dict().items():
        np.testing.assert_allclose(v, start[k], atol=1e-12)


def test_sign_per_parameter():
    pol = build_policy_net(1).astype(np.float64)
    name = "policy.fc2.b"
    before = pol.params[name].data.copy()
    delta = {name: np.array([0.25])}
    apply_episode_update(pol, delta, SUCCESS)
    assert pol.params[name].data == pytest.approx(before + 0.25)
    apply_episode_update(pol, delta, FAILURE)
    apply_episode_update(pol, delta, FAILURE)
    assert pol.params[name].data == pytest.approx(before - 0.25)


def test_update_shape_mismatch():
    pol = build_policy_net(1)
    with pytest.raises(ValueError):
        apply_episode_update(pol, {"policy.fc2.b": np.zeros(3)}, SUCCESS)


def test_flipped_outcome_negates_update():
    pol = build_policy_net(2).astype(np.float64)
    rng = np.random.default_rng(3)
    states, actions = [_maps(rng, 3).astype(np.float64) for _ in range(6)], [0, 2, 1, 1, 0, 2]
    g = episode_gradient(pol, Rollout(states, actions, [1.0] * 6, SUCCESS), 0.95)
    a, b = build_policy_net(2).astype(np.float64), build_policy_net(2).astype(np.float64)
    apply_episode_update(a, g, SUCCESS)
    apply_episode_update(b, g, FAILURE)
    base = pol.state_dict()
    for k in base:
        np.testing.assert_allclose(a.state_dict()[k] - base[k], -(b.state_dict()[k] - base[k]), atol=1e-12)


# replay


def _experiences(n, rng, size=2):
    return [Experience(_maps(rng, size), int(rng.integers(size)), SUCCESS) for _ in range(n)]


def test_push_success_episode():
    mem = ReplayMemory()
    push_experiences(mem, _experiences(30, np.random.default_rng(0)), SUCCESS)
    assert len(mem.success) == 30 and len(mem.failure) == 0


def test_failure_never_touches_success():
    mem = ReplayMemory()
    push_experiences(mem, _experiences(7, np.random.default_rng(0)), FAILURE)
    assert len(mem.success) == 0 and len(mem.failure) == 7
    assert all(e.outcome == FAILURE for e in mem.failure)


def test_fifo_eviction():
    mem = ReplayMemory(capacity=5000)
    rng = np.random.default_rng(1)
    first = _experiences(5000, rng, size=1)
    push_experiences(mem, first, SUCCESS)
    push_experiences(mem, _experiences(10, rng, size=1), SUCCESS)
    assert len(mem.success) == 5000
    assert mem.success[0].maps is first[10].maps


def test_empty_replay_changes_nothing():
    pol = build_policy_net(3)
    before = pol.checksum()
    assert replay_update(pol, ReplayMemory(), 30, np.random.default_rng(0), 1e-2) == 0
    assert pol.checksum() == before


def test_replay_term_count():
    mem = ReplayMemory()
    rng = np.random.default_rng(2)
    push_experiences(mem, _experiences(200, rng), SUCCESS)
    push_experiences(mem, _experiences(200, rng), FAILURE)
    _, n = replay_gradient(build_policy_net(0), mem, 60, rng)
    assert n == 120
    assert TrainConfig().replay_count(30) == 60
    assert TrainConfig(replay_per_buffer=40).replay_count(30) == 40


def test_partial_buffers():
    mem = ReplayMemory()
    rng = np.random.default_rng(3)
    push_experiences(mem, _experiences(5, rng), SUCCESS)
    _, n = replay_gradient(build_policy_net(0), mem, 60, rng)
    assert n == 5


def test_replayed_success_raises_its_log_probability():
    pol = build_policy_net(4).astype(np.float64)
    rng = np.random.default_rng(4)
    exp = Experience(_maps(rng, 3).astype(np.float64), 1, SUCCESS)
    mem = ReplayMemory()
    push_experiences(mem, [exp], SUCCESS)
    before = log_policy(pol, exp.maps, 1)
    replay_update(pol, mem, 30, rng, learning_rate=1e-3)
    assert log_policy(pol, exp.maps, 1) >= before


def test_experience_action_bound():
    with pytest.raises(IndexError):
        Experience(np.zeros((2, 31, 31)), 2, SUCCESS)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(discount=0.0)
    with pytest.raises(ValueError):
        TrainConfig(failure_threshold=1.0)


# training loop


def test_zero_episodes_policy_unchanged():
    pol = build_policy_net(5)
    before = pol.checksum()
    log = train_policy(pol, BanditEnvironment(), TrainConfig(episodes=0))
    assert pol.checksum() == before and log.records == []


def test_bandit_training_reproducible_and_logged(tmp_path):
    cfg = TrainConfig(episodes=6, learning_rate=1e-2, rollout_batch=3, checkpoint_every=3)
    a, b = build_policy_net(6), build_policy_net(6)
    log = train_policy(a, BanditEnvironment(), cfg, seed=3, log_path=tmp_path / "log.tsv", checkpoint_dir=tmp_path / "ck")
    train_policy(b, BanditEnvironment(), cfg, seed=3)
    assert a.checksum() == b.checksum()
    lines = (tmp_path / "log.tsv").read_text().splitlines()
    assert len(lines) == 7 and lines[0].startswith("episode\tlength\toutcome")
    assert sorted(p.name for p in (tmp_path / "ck").iterdir()) == ["policy_000003.rdtw", "policy_000006.rdtw"]
    assert all(r.success_buffer + r.failure_buffer == 30 * (r.episode + 1) for r in log.records)



def test_singleton_pool_episode_has_zero_gradient(correlation_matcher):
    seq = gen_synthetic_sequence(SyntheticSpec(length=30, velocity=(1, 0)), seed=0)
    pol = build_policy_net(7)
    exps, delta, boxes = run_training_episode(correlation_matcher, pol, seq, np.random.default_rng(0), TrainConfig())
    assert len(exps) == 29 and len(boxes) == 30
    assert all(len(e.maps) == 1 for e in exps)
    assert all(np.all(v == 0) for v in delta.values())


def test_tracking_environment_leaves_matcher_untouched(correlation_matcher):
    from rltrack.matching import build_matching_net

    matcher = build_matching_net(0)
    seqs = [gen_synthetic_sequence(SyntheticSpec(length=40, velocity=(1, 1)), seed=1)]
    before = matcher.checksum()
    cfg = TrainConfig(episodes=2, update_interval=10, rollout_batch=2, learning_rate=1e-2)
    train_policy(build_policy_net(0), TrackingEnvironment(matcher, seqs, cfg), cfg)
    assert matcher.checksum() == before


def test_exhausted_source(correlation_matcher):
    seqs = [gen_synthetic_sequence(SyntheticSpec(length=30), seed=2)]
    cfg = TrainConfig(episodes=3, rollout_batch=1)
    env = TrackingEnvironment(correlation_matcher, seqs, cfg, episodes=2)
    with pytest.raises(EpisodeSourceExhausted):
        train_policy(build_policy_net(0), env, cfg)
