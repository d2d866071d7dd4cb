import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from advhighway import sim
from advhighway.av import (AV_OBS_DIM, COLLISION_REWARD, FrozenPolicy, RewardParams, frozen_policy,
                           lead_gap, obs_scaling, observe_av, raw_av_observation, reward_av,
                           reward_terms, train_av)
from advhighway.dqn import TrainConfig
from advhighway.qnet import QNetwork, forward
from advhighway.sim import ACTIONS, AV, ENV, RoadConfig, TrafficConfig, Vehicle, WorldState
from oracles import av_reward_straight_line, brute_neighbors

ROAD = RoadConfig()


def world_of(*vs):
    return WorldState(0, list(vs), 0, ROAD, TrafficConfig())


def av_at(x=0.0, lane=1, vx=28.0):
    return Vehicle(0, AV, x, ROAD.lane_center(lane), vx, lane)


# --------------------------------------------------------------------------
# observation

def test_observation_dimension():
    assert observe_av(sim.init_world(0, 10)).shape == (AV_OBS_DIM,)


def test_alone_gives_sentinels():
    raw = raw_av_observation(world_of(av_at(vx=22.0)))
    assert raw[:2].tolist() == [ROAD.lane_center(1), 22.0]
    slots = raw[2:].reshape(6, 3)
    for k, (dx, dy, dv) in enumerate(slots):
        assert dx == (ROAD.sensor_range if k % 2 == 0 else -ROAD.sensor_range)
        assert dy == 0.0 and dv == 0.0


def test_identical_pose_neighbour_is_zero_before_scaling():
    other = Vehicle(1, ENV, 0.0, ROAD.lane_center(1), 28.0, 1)
    raw = raw_av_observation(world_of(av_at(), other))
    assert raw[2 + 3 * 2: 2 + 3 * 3].tolist() == [0.0, 0.0, 0.0]


@given(st.integers(0, 2**32))
def test_slots_match_exhaustive_scan(seed):
    w = sim.init_world(seed, 20)
    raw = raw_av_observation(w)
    for k, nid in enumerate(brute_neighbors(w, 0)):
        if nid is not None:
            u = w.by_id(nid)
            assert raw[2 + 3 * k] == u.x - w.av.x


@given(st.integers(0, 2**32))
def test_scaling_is_bijective_and_bounded(seed):
    w = sim.init_world(seed, 15)
    offset, scale = obs_scaling(ROAD)
    assert np.all(scale > 0)
    obs = observe_av(w)
    assert np.allclose(obs * scale + offset, raw_av_observation(w), atol=1e-12)
    assert np.all(np.abs(obs) <= 1.0 + 1e-12)


# --------------------------------------------------------------------------
# reward

def test_setpoints_give_zero():
    assert reward_terms(10.0, 10.0, 3.6, 3.6, 28.0, RewardParams()) == (0.0, 0.0, 0.0)


def test_collision_reward():
    w = world_of(av_at())
    assert reward_av(w, w, True, RewardParams()) == COLLISION_REWARD == -2.0


def test_worked_example_dx_safe_30():
    params = RewardParams(dx_safe_min=30.0, dx_safe_headway=0.0)
    lead = Vehicle(1, ENV, 15.0 + ROAD.vehicle_length, ROAD.lane_center(1), 28.0, 1)
    w = world_of(av_at(), lead)
    assert lead_gap(w, 0) == pytest.approx(15.0)
    want = (math.exp(-225 / 300) - 1) / 3
    assert reward_av(w, w, False, params) == pytest.approx(want, rel=1e-12)
    assert want == pytest.approx(-0.17588, abs=5e-6)


def test_no_lead_means_zero_distance_term():
    r_x, _, _ = reward_terms(None, 28.0, 0.0, 0.0, 28.0, RewardParams())
    assert r_x == 0.0


def test_distance_term_continuous_at_threshold():
    p = RewardParams()
    below, _, _ = reward_terms(20.0 - 1e-9, 20.0, 0, 0, 28, p)
    assert abs(below) < 1e-15


@given(st.one_of(st.none(), st.floats(0, 100)), st.floats(10, 30), st.floats(0, 7.2),
       st.floats(0, 7.2), st.floats(12, 30))
def test_terms_in_half_open_unit_interval(dx, dx_safe, y, y_des, vx):
    # once exp(-z) < 2**-53 the float result rounds to exactly -1.0 (|vx - v_des| > ~19 m/s),
    # so the open bound is checked where it is representable
    for t in reward_terms(dx, dx_safe, y, y_des, vx, RewardParams()):
        assert -1.0 < t <= 0.0


@given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 15), st.floats(0, 15))
def test_monotone_in_deviations(dy1, dy2, dv1, dv2):
    p = RewardParams()
    f = lambda dy, dv: sum(reward_terms(None, 10.0, 3.6 + dy, 3.6, 28.0 - dv, p))
    if dy1 <= dy2:
        assert f(dy1, dv1) >= f(dy2, dv1)
    if dv1 <= dv2:
        assert f(dy1, dv1) >= f(dy1, dv2)


def test_reward_matches_straight_line_formula():
    rng = np.random.default_rng(0)
    p = RewardParams()
    for _ in range(2000):
        w = sim.init_world(int(rng.integers(2**32)), 15)
        nxt, _ = sim.step(w, {**sim.env_actions(w), 0: ACTIONS[int(rng.integers(12))]})
        collided = bool(rng.random() < 0.05)
        av = nxt.av
        y_des = ROAD.lane_center(av.target_lane if av.lc_step else av.lane)
        want = av_reward_straight_line(lead_gap(nxt, 0), max(10.0, w.av.vx), av.y, y_des, av.vx,
                                       28.0, 10.0, 10.0, collided)
        got = reward_av(w, nxt, collided, p)
        assert got == pytest.approx(want, rel=1e-12, abs=1e-15)


def test_reward_params_validated():
    with pytest.raises(ValueError):
        RewardParams(v_des=0.0)
    with pytest.raises(ValueError):
        RewardParams(y_des=-1.0)


# --------------------------------------------------------------------------
# frozen policy

def policy(seed=0, safety=False):
    off, sc = obs_scaling(ROAD)
    return FrozenPolicy(QNetwork.init([20, 16, 12], np.random.default_rng(seed)), off, sc, safety)


def test_same_observation_same_action():
    pol = policy()
    obs = observe_av(sim.init_world(1, 10))
    assert frozen_policy(pol, obs) == frozen_policy(pol, obs)


def test_argmax_shift_invariance():
    pol = policy(1)
    shifted = FrozenPolicy(pol.net.copy(), pol.obs_offset, pol.obs_scale, False)
    shifted.net.biases[-1] += 3.7
    rng = np.random.default_rng(2)
    for _ in range(100):
        obs = rng.uniform(-1, 1, 20)
        assert frozen_policy(pol, obs) == frozen_policy(shifted, obs)


def test_action_is_argmax_of_forward():
    pol = policy(3)
    rng = np.random.default_rng(4)
    for _ in range(100):
        obs = rng.uniform(-1, 1, 20)
        assert frozen_policy(pol, obs).index == int(np.argmax(forward(pol.net, obs)))


def test_safety_applied_only_when_enabled():
    w = world_of(av_at(vx=25.0), Vehicle(1, ENV, 8.0, ROAD.lane_center(1), 10.0, 1))
    net = QNetwork([np.zeros((12, 20))], [np.eye(12)[0]])  # always maintain/keep
    off, sc = obs_scaling(ROAD)
    assert FrozenPolicy(net, off, sc, False).act(w) == ACTIONS[0]
    assert FrozenPolicy(net, off, sc, True).act(w).ax == sim.Long.HARD_BRAKE


# --------------------------------------------------------------------------
# training

def test_training_is_deterministic():
    cfg = TrainConfig(episodes=3, steps_per_episode=40, learning_rate=1e-3, hidden=(16,), seed=5,
                      batch_size=8)
    a, b = train_av(cfg), train_av(cfg)
    assert a.episode_returns == b.episode_returns
    for x, y in zip(a.checkpoint.net.params(), b.checkpoint.net.params()):
        assert np.array_equal(x, y)
    assert np.array_equal(a.checkpoint.obs_scale, obs_scaling(ROAD)[1])


def test_checkpoint_selection_keeps_best_validation_round():
    cfg = TrainConfig(episodes=4, steps_per_episode=30, learning_rate=1e-3, hidden=(16,), seed=2,
                      batch_size=8, select_every=2, select_rollouts=3)
    res = train_av(cfg)
    assert [v[0] for v in res.validation] == [2, 4]
    best = max(res.validation, key=lambda v: (-v[1], v[2]))
    assert res.selected_episode == best[0] == res.checkpoint.meta["selected_episode"]
    again = train_av(cfg)
    assert again.validation == res.validation


def test_selection_off_keeps_last_network():
    cfg = TrainConfig(episodes=2, steps_per_episode=20, hidden=(8,), seed=0, batch_size=4)
    res = train_av(cfg)
    assert res.validation == [] and res.selected_episode is None
    assert "selected_episode" not in res.checkpoint.meta
