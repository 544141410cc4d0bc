import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from srlnav.env import Observation, Pose, Truth
from srlnav.errors import ContractViolation
from srlnav.replay import (
    PriorBatch,
    ReplayBuffer,
    Transition,
    build_prior_batch,
    export_csv,
    import_csv,
)


def make_transition(episode, step, reward, terminal="none", seed=None, n_beams=4, n_px=2, tgt=None):
    rng = np.random.default_rng(seed if seed is not None else episode * 1000 + step)
    obs = Observation(rng.uniform(0, 5, n_beams), rng.uniform(0, 1, (n_px, 3)), tgt)
    nxt = Observation(rng.uniform(0, 5, n_beams), rng.uniform(0, 1, (n_px, 3)), tgt)
    truth = Truth(Pose(rng.uniform(0, 4), rng.uniform(0, 4), 0.1), rng.uniform(0, 5), 0)
    prev = Truth(Pose(rng.uniform(0, 4), rng.uniform(0, 4), -0.3), rng.uniform(0, 5), 0)
    return Transition(obs, int(rng.integers(3)), reward, nxt, terminal, truth, episode, step, prev)


def fill_episode(buf, episode, rewards, terminal="timeout"):
    for k, r in enumerate(rewards):
        t = terminal if k == len(rewards) - 1 else "none"
        buf.push(make_transition(episode, k, r, terminal=t))


# -- push / FIFO -----------------------------------------------------------


def test_fifo_eviction():
    buf = ReplayBuffer(2)
    for step, r in enumerate([1.0, 2.0, 3.0]):
        buf.push(make_transition(0, step, r))
    rewards = sorted(buf.reward[: len(buf)])
    assert rewards == [2.0, 3.0]
    assert len(buf) == 2


def test_push_readback_identity():
    buf = ReplayBuffer(4)
    tr = make_transition(3, 7, -1.5, terminal="crashed")
    buf.push(tr)
    back = buf.get(0)
    assert np.array_equal(back.obs.lidar, tr.obs.lidar)
    assert np.array_equal(back.obs.camera, tr.obs.camera)
    assert np.array_equal(back.next_obs.lidar, tr.next_obs.lidar)
    assert back.action == tr.action
    assert back.reward == tr.reward
    assert back.terminal == "crashed"
    assert back.episode_id == 3 and back.step_idx == 7
    assert back.truth.pose.x == tr.truth.pose.x
    assert back.truth.distance == tr.truth.distance
    assert back.prev_truth.pose.x == tr.prev_truth.pose.x
    assert back.prev_truth.distance == tr.prev_truth.distance


def test_size_never_exceeds_capacity():
    buf = ReplayBuffer(37)
    rng = np.random.default_rng(0)
    for i in range(100_000):
        buf.push(make_transition(i // 100, i % 100, float(rng.uniform(-1, 1)), n_beams=2, n_px=1))
        assert len(buf) <= 37
    assert len(buf) == 37


def test_shape_mismatch_rejected():
    buf = ReplayBuffer(4)
    buf.push(make_transition(0, 0, 0.0, n_beams=4))
    with pytest.raises(ContractViolation):
        buf.push(make_transition(0, 1, 0.0, n_beams=8))


# -- sampling --------------------------------------------------------------


def test_sample_single_item_repeats():
    buf = ReplayBuffer(4)
    buf.push(make_transition(0, 0, 1.25))
    out = buf.sample_uniform(3, np.random.default_rng(0))
    assert len(out) == 3
    assert all(t.reward == 1.25 for t in out)


def test_sample_empty_buffer_rejected():
    buf = ReplayBuffer(4)
    with pytest.raises(ContractViolation):
        buf.sample_uniform(1, np.random.default_rng(0))


def test_sample_uniformity_chi2():
    buf = ReplayBuffer(100)
    fill_episode(buf, 0, list(range(100)))
    idx = buf.sample_indices(100_000, np.random.default_rng(42))
    counts = np.bincount(idx, minlength=100)
    assert stats.chisquare(counts).pvalue > 0.01


def test_sample_deterministic():
    buf = ReplayBuffer(50)
    fill_episode(buf, 0, list(range(50)))
    a = buf.sample_indices(20, np.random.default_rng(9))
    b = buf.sample_indices(20, np.random.default_rng(9))
    assert np.array_equal(a, b)


# -- successor bookkeeping -------------------------------------------------


def test_prop_eligibility_respects_episodes():
    buf = ReplayBuffer(100)
    fill_episode(buf, 0, [0.0, 1.0, 2.0])  # indices 0..2
    fill_episode(buf, 1, [5.0, 6.0])  # indices 3..4
    elig = set(buf.prop_eligible())
    # last step of each episode has no successor
    assert elig == {0, 1, 3}
    assert np.array_equal(buf.delta_rewards(np.array([0, 1, 3])), [1.0, 1.0, 1.0])


def test_delta_rewards_requires_successor():
    buf = ReplayBuffer(10)
    fill_episode(buf, 0, [0.0, 1.0])
    with pytest.raises(ContractViolation):
        buf.delta_rewards(np.array([1]))


@given(st.integers(0, 2**31), st.integers(3, 12))
@settings(deadline=None, max_examples=40)
def test_successor_links_valid_after_wraparound(seed, capacity):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(capacity)
    episode = 0
    step = 0
    for _ in range(4 * capacity):
        buf.push(make_transition(episode, step, float(rng.uniform(-1, 1)), n_beams=2, n_px=1))
        if rng.uniform() < 0.25:
            episode += 1
            step = 0
        else:
            step += 1
    for i in buf.prop_eligible():
        j = buf.succ[i]
        assert buf.episode[j] == buf.episode[i]
        assert buf.step_idx[j] == buf.step_idx[i] + 1
    # no stale link may point at an overwritten slot
    for i in range(len(buf)):
        if buf.succ[i] >= 0:
            assert (int(buf.episode[i]), int(buf.step_idx[i]) + 1) in buf._key_to_idx


# -- prior batches ---------------------------------------------------------


def test_caus_pairs_empty_when_rewards_identical():
    buf = ReplayBuffer(10)
    fill_episode(buf, 0, [2.0] * 6)
    batch = build_prior_batch(buf, 4, 8, 0.05, 1e-6, np.random.default_rng(0))
    assert batch.caus_pairs.shape == (0, 2)
    assert len(batch.base) == 4


def test_caus_pairs_straddle_reward_split():
    # rewards {0, 0, 5}: with delta_diff=1 only 0-vs-5 pairs qualify
    buf = ReplayBuffer(10)
    fill_episode(buf, 0, [0.0, 0.0, 5.0])
    qualifying = {
        (a, b)
        for a, b in itertools.permutations(range(3), 2)
        if abs(buf.reward[a] - buf.reward[b]) > 1.0
    }
    assert qualifying == {(0, 2), (2, 0), (1, 2), (2, 1)}  # enumeration oracle
    batch = build_prior_batch(buf, 2, 16, 0.05, 1.0, np.random.default_rng(1))
    assert len(batch.caus_pairs) > 0
    for a, b in batch.caus_pairs:
        assert (int(a), int(b)) in qualifying


def test_prop_pair_on_magnitude_of_reward_change():
    # reward changes +2 then -2: equal magnitude, so the pair qualifies
    buf = ReplayBuffer(10)
    fill_episode(buf, 0, [0.0, 2.0, 0.0])
    elig = buf.prop_eligible()
    assert set(elig) == {0, 1}
    assert np.array_equal(np.sort(buf.delta_rewards(elig)), [-2.0, 2.0])
    batch = build_prior_batch(buf, 2, 16, 0.1, 0.5, np.random.default_rng(2))
    assert len(batch.prop_pairs) > 0
    for a, b in batch.prop_pairs:
        assert {int(a), int(b)} == {0, 1}


def test_empty_buffer_rejected():
    with pytest.raises(ContractViolation):
        build_prior_batch(ReplayBuffer(4), 1, 1, 0.05, 0.01, np.random.default_rng(0))


@given(st.integers(0, 2**31))
@settings(deadline=None, max_examples=30)
def test_prior_batch_predicates_hold(seed):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(64)
    for ep in range(4):
        fill_episode(buf, ep, list(rng.uniform(-3, 3, size=8)))
    delta_sim, delta_diff = 0.5, 0.8
    batch = build_prior_batch(buf, 16, 16, delta_sim, delta_diff, rng)
    if len(batch.prop_pairs):
        dr = np.abs(buf.delta_rewards(batch.prop_pairs.reshape(-1)).reshape(-1, 2))
        assert np.all(np.abs(dr[:, 0] - dr[:, 1]) <= delta_sim)
        assert np.all(batch.prop_pairs[:, 0] != batch.prop_pairs[:, 1])
    if len(batch.caus_pairs):
        r = buf.reward[batch.caus_pairs]
        assert np.all(np.abs(r[:, 0] - r[:, 1]) > delta_diff)
        assert np.all(batch.caus_pairs[:, 0] != batch.caus_pairs[:, 1])
    assert np.all((0 <= batch.base) & (batch.base < len(buf)))


def test_prior_batch_deterministic():
    buf = ReplayBuffer(64)
    rng = np.random.default_rng(5)
    for ep in range(3):
        fill_episode(buf, ep, list(rng.uniform(-2, 2, size=10)))
    a = build_prior_batch(buf, 8, 8, 0.3, 0.5, np.random.default_rng(77))
    b = build_prior_batch(buf, 8, 8, 0.3, 0.5, np.random.default_rng(77))
    assert np.array_equal(a.base, b.base)
    assert np.array_equal(a.prop_pairs, b.prop_pairs)
    assert np.array_equal(a.caus_pairs, b.caus_pairs)


# -- snapshots -------------------------------------------------------------


@pytest.mark.parametrize("multi", [False, True])
def test_snapshot_roundtrip_exact(tmp_path, multi):
    buf = ReplayBuffer(32)
    tgt = (3.25, 0.75) if multi else None
    rng = np.random.default_rng(8)
    for ep in range(3):
        for k in range(5):
            buf.push(
                make_transition(ep, k, float(rng.normal()), tgt=tgt,
                                terminal="none" if k < 4 else "reached")
            )
    path = tmp_path / "buffer.csv"
    export_csv(buf, path)
    back = import_csv(path)
    assert len(back) == len(buf)
    assert np.array_equal(back.lidar[: len(back)], buf.lidar[: len(buf)])
    assert np.array_equal(back.camera[: len(back)], buf.camera[: len(buf)])
    assert np.array_equal(back.next_camera[: len(back)], buf.next_camera[: len(buf)])
    assert np.array_equal(back.reward[: len(back)], buf.reward[: len(buf)])
    assert np.array_equal(back.terminal[: len(back)], buf.terminal[: len(buf)])
    assert np.array_equal(back.truth[: len(back)], buf.truth[: len(buf)])
    assert np.array_equal(back.truth_prev[: len(back)], buf.truth_prev[: len(buf)])
    assert np.array_equal(back.succ[: len(back)], buf.succ[: len(buf)])
    if multi:
        assert np.array_equal(back.target_xy[: len(back)], buf.target_xy[: len(buf)])


def test_snapshot_preserves_fifo_order_after_wrap(tmp_path):
    buf = ReplayBuffer(4)
    fill_episode(buf, 0, [0.0, 1.0, 2.0, 3.0, 4.0, 5.0])  # wraps twice
    path = tmp_path / "wrap.csv"
    export_csv(buf, path)
    back = import_csv(path)
    # oldest-first: surviving rewards are 2..5
    assert list(back.reward[: len(back)]) == [2.0, 3.0, 4.0, 5.0]


def test_import_rejects_non_snapshot(tmp_path):
    p = tmp_path / "junk.csv"
    p.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ContractViolation):
        import_csv(p)
