import math

import pytest
from hypothesis import given, strategies as st

from advhighway import sim
from advhighway.sim import (ACTIONS, AV, ENV, NOOP, ConfigurationError, DiscreteAction, Lat, Long,
                            RoadConfig, TrafficConfig, Vehicle, WorldState)
from oracles import brute_neighbors

ROAD = RoadConfig()


def world_of(*vehicles, seed=0, road=ROAD, traffic=None):
    return WorldState(0, list(vehicles), seed, road, traffic or TrafficConfig())


def car(vid, x, lane, vx=20.0, role=ENV, **kw):
    return Vehicle(vid, role, float(x), ROAD.lane_center(lane), float(vx), lane,
                   desired_speed=kw.pop("desired", vx), **kw)


def act(ax=Long.MAINTAIN, ay=Lat.KEEP):
    return DiscreteAction(ax, ay)


# --------------------------------------------------------------------------
# actions and configs

def test_twelve_actions_index_roundtrip():
    assert len(ACTIONS) == 12
    assert len(set(ACTIONS)) == 12
    for i, a in enumerate(ACTIONS):
        assert a.index == i
        assert DiscreteAction.from_index(i) == a


@pytest.mark.parametrize("kw", [dict(lane_count=4), dict(lane_width=1.5),
                                dict(speed_min=30.0, speed_max=30.0)])
def test_road_config_invariants(kw):
    with pytest.raises(ConfigurationError):
        RoadConfig(**kw)


# --------------------------------------------------------------------------
# step

def test_uniform_motion_keeps_relative_positions():
    w = world_of(car(0, 0, 0, role=AV), car(1, 30, 1), car(2, -40, 2))
    nw, ev = sim.step(w, [NOOP] * 3)
    assert ev == []
    assert [v.x - nw.vehicles[0].x for v in nw.vehicles] == [0.0, 30.0, -40.0]
    assert all(v.y == u.y for v, u in zip(nw.vehicles, w.vehicles))


def test_accelerate_one_step_kinematics():
    w = world_of(car(0, 0, 1, vx=20.0, role=AV))
    nw, _ = sim.step(w, [act(Long.ACCELERATE)])
    a = ROAD.accel
    assert nw.vehicles[0].vx == 20.0 + a
    assert nw.vehicles[0].x == 20.0 + a / 2


def test_rear_end_gap_oracle():
    # rear bumper gap 2 m, rear car 5 m/s faster: closed-form gap after 1 s is 2 - 5 < 0
    lead = car(1, 2.0 + ROAD.vehicle_length, 1, vx=20.0)
    rear = car(0, 0.0, 1, vx=25.0, role=AV)
    gap_after = (lead.x + lead.vx) - (rear.x + rear.vx) - ROAD.vehicle_length
    assert gap_after < 0
    _, ev = sim.step(world_of(rear, lead), [NOOP, NOOP])
    assert [(e.vehicle_a, e.vehicle_b) for e in ev] == [(0, 1)]


def test_passing_through_within_one_step_is_a_collision():
    lead = car(1, 8.0, 1, vx=15.0)
    rear = car(0, 0.0, 1, vx=28.0, role=AV)
    nw, ev = sim.step(world_of(rear, lead), [NOOP, NOOP])
    assert nw.vehicles[0].x > nw.vehicles[1].x + ROAD.vehicle_length  # end points do not overlap
    assert sim.detect_collisions(nw) == []
    assert [(e.vehicle_a, e.vehicle_b) for e in ev] == [(0, 1)]


def test_overtaking_in_adjacent_lane_is_not_a_collision():
    _, ev = sim.step(world_of(car(0, 0.0, 1, vx=28.0, role=AV), car(1, 8.0, 2, vx=15.0)), [NOOP, NOOP])
    assert ev == []


def test_speed_clamps():
    w = world_of(car(0, 0, 1, vx=1.0, role=AV), car(1, 100, 1, vx=29.5))
    nw, _ = sim.step(w, [act(Long.HARD_BRAKE), act(Long.ACCELERATE)])
    assert nw.vehicles[0].vx == 0.0
    assert nw.vehicles[0].x == pytest.approx(1.0 / 8.0)  # stops after 0.25 s
    assert nw.vehicles[1].vx == ROAD.speed_max


def test_step_does_not_mutate_input():
    w = sim.init_world(3, 10, True)
    before = w.snapshot()
    sim.step(w, {**sim.env_actions(w), 0: NOOP, 1: NOOP})
    assert w.snapshot() == before


def test_lane_change_takes_three_steps_with_linear_profile():
    w = world_of(car(0, 0, 0, role=AV))
    ys = []
    for _ in range(3):
        w, _ = sim.step(w, [act(ay=Lat.LEFT)])
        ys.append(w.vehicles[0].y)
    assert ys == pytest.approx([1.2, 2.4, 3.6])
    assert w.vehicles[0].lane == 1 and not w.vehicles[0].changing


def test_abandon_reverses_progress_at_same_rate():
    w = world_of(car(0, 0, 0, role=AV))
    w, _ = sim.step(w, [act(ay=Lat.LEFT)])
    w, _ = sim.step(w, [act(ay=Lat.LEFT)])
    assert w.vehicles[0].progress(ROAD) == pytest.approx(2 / 3)
    w, _ = sim.step(w, [act(ay=Lat.RIGHT)])
    assert w.vehicles[0].progress(ROAD) == pytest.approx(1 / 3)
    w, _ = sim.step(w, [act(ay=Lat.KEEP)])
    v = w.vehicles[0]
    assert (v.lane, v.lc_step, v.y) == (0, 0, 0.0)


def test_never_leaves_the_road():
    w = world_of(car(0, 0, 2, role=AV))
    w, _ = sim.step(w, [act(ay=Lat.LEFT)])
    assert w.vehicles[0].lane == 2 and w.vehicles[0].y == ROAD.lane_center(2)


action_streams = st.lists(st.integers(0, 11), min_size=1, max_size=40)


@given(st.floats(0, 30), action_streams)
def test_velocity_bounds_under_arbitrary_actions(v0, stream):
    w = world_of(car(0, 0, 1, vx=v0, role=AV))
    for i in stream:
        w, _ = sim.step(w, [ACTIONS[i]])
        v = w.vehicles[0]
        assert 0.0 <= v.vx <= ROAD.speed_max
        assert 0.0 <= v.y <= ROAD.lane_center(ROAD.lane_count - 1)


@given(st.lists(st.integers(0, 3), max_size=40), st.integers(0, 2))
def test_keep_throughout_never_changes_lane(axs, lane):
    w = world_of(car(0, 0, lane, role=AV))
    for ax in axs:
        w, _ = sim.step(w, [act(Long(ax), Lat.KEEP)])
        assert w.vehicles[0].lane == lane and w.vehicles[0].y == ROAD.lane_center(lane)


@given(st.lists(st.integers(0, 11), min_size=1, max_size=30))
def test_lane_change_progress_monotone_until_end(stream):
    # while the command keeps pointing the same way, progress only grows
    w = world_of(car(0, 0, 1, role=AV))
    for i in stream:
        a = ACTIONS[i]
        v = w.vehicles[0]
        before = v.progress(ROAD), v.lc_dir
        w, _ = sim.step(w, [a])
        u = w.vehicles[0]
        if v.changing and (1 if a.ay == Lat.LEFT else -1 if a.ay == Lat.RIGHT else 0) == v.lc_dir:
            assert u.progress(ROAD) > before[0] or (not u.changing and u.lane == v.lane + v.lc_dir)


# --------------------------------------------------------------------------
# collisions

def test_side_by_side_with_clearance_is_not_a_collision():
    a = car(0, 0, 0)
    b = Vehicle(1, ENV, 0.0, ROAD.vehicle_width + 0.01, 20.0, 0)
    assert sim.detect_collisions(world_of(a, b)) == []


def test_identical_pose_collides():
    assert len(sim.detect_collisions(world_of(car(0, 5, 1), car(1, 5, 1)))) == 1


poses = st.lists(st.tuples(st.floats(-30, 30), st.floats(0, 7.2)), min_size=0, max_size=12)


@given(poses)
def test_collisions_match_interval_oracle(ps):
    vs = [Vehicle(i, ENV, x, y, 20.0, 0) for i, (x, y) in enumerate(ps)]
    got = {(e.vehicle_a, e.vehicle_b) for e in sim.detect_collisions(world_of(*vs))}
    L, W = ROAD.vehicle_length, ROAD.vehicle_width
    want = set()
    for i in range(len(vs)):
        for j in range(i + 1, len(vs)):
            a, b = vs[i], vs[j]
            x_overlap = max(a.x - L / 2, b.x - L / 2) < min(a.x + L / 2, b.x + L / 2)
            y_overlap = max(a.y - W / 2, b.y - W / 2) < min(a.y + W / 2, b.y + W / 2)
            if x_overlap and y_overlap:
                want.add((i, j))
    assert got == want
    assert all(a != b for a, b in got)


@given(poses)
def test_collisions_symmetric_in_vehicle_order(ps):
    vs = [Vehicle(i, ENV, x, y, 20.0, 0) for i, (x, y) in enumerate(ps)]
    fwd = sim.detect_collisions(world_of(*vs))
    rev = sim.detect_collisions(world_of(*reversed([v.copy() for v in vs])))
    assert sorted(fwd) == sorted(rev)


# --------------------------------------------------------------------------
# neighbours

def test_alone_gives_six_empty_slots():
    assert sim.nearest_neighbors(world_of(car(0, 0, 1, role=AV)), 0) == [None] * 6


def test_single_car_ahead_fills_front_slot():
    slots = sim.nearest_neighbors(world_of(car(0, 0, 1, role=AV), car(1, 20, 1)), 0)
    assert slots == [None, None, 1, None, None, None]


@given(st.lists(st.tuples(st.floats(-150, 150), st.floats(0, 7.2)), max_size=25), st.integers(0, 24))
def test_neighbors_match_exhaustive_scan(ps, pick):
    vs = [Vehicle(i, ENV, x, y, 20.0, 0) for i, (x, y) in enumerate(ps)] or [car(0, 0, 0)]
    w = world_of(*vs)
    ego = pick % len(vs)
    got = sim.nearest_neighbors(w, ego)
    assert len(got) == 6
    assert got == brute_neighbors(w, ego)


# --------------------------------------------------------------------------
# on_marker

def test_centered_vehicle_not_on_marker():
    assert not sim.on_marker(car(0, 0, 1), ROAD)


def test_edge_touching_marker_counts():
    y = ROAD.markers[0] - ROAD.vehicle_width / 2
    assert sim.on_marker(Vehicle(0, ENV, 0.0, y, 20.0, 0), ROAD)
    assert not sim.on_marker(Vehicle(0, ENV, 0.0, y - 1e-9, 20.0, 0), ROAD)


def test_half_way_through_change_is_on_marker():
    road = RoadConfig(lane_change_steps=2)
    w = WorldState(0, [Vehicle(0, AV, 0.0, 0.0, 20.0, 0)], 0, road)
    w, _ = sim.step(w, [act(ay=Lat.LEFT)])
    v = w.vehicles[0]
    assert v.progress(road) == 0.5
    lo, hi = v.y - road.vehicle_width / 2, v.y + road.vehicle_width / 2
    assert lo <= road.markers[0] <= hi  # interval oracle
    assert sim.on_marker(v, road) and sim.marker_index(v, road) == 0


# --------------------------------------------------------------------------
# env policy

def test_env_accelerates_on_free_road():
    w = world_of(car(0, -150, 0, role=AV), car(1, 0, 1, vx=20.0, desired=26.0), car(2, 120, 1, vx=15.0))
    assert sim.env_policy(w, 1).ax == Long.ACCELERATE


def test_env_brakes_below_headway():
    w = world_of(car(0, -150, 0, role=AV), car(1, 0, 1, vx=25.0, desired=26.0), car(2, 15, 1, vx=25.0))
    assert sim.env_policy(w, 1).ax in (Long.BRAKE, Long.HARD_BRAKE)


def test_env_lane_change_frequency():
    # a lone env car on the middle lane: every in-lane step is an initiation opportunity
    tr = TrafficConfig()
    opportunities = initiations = 0
    for seed in range(200):
        w = world_of(car(0, -190, 0, vx=22.0, role=AV, desired=22.0), car(1, 0, 1, vx=22.0, desired=22.0),
                     seed=seed)
        for t in range(50):
            w.step_index = t
            v = w.vehicles[1]
            if not v.changing:
                opportunities += 1
                initiations += sim.env_policy(w, 1).ay != Lat.KEEP
    freq = initiations / opportunities
    assert opportunities >= 1e4
    assert abs(freq - tr.lane_change_prob) <= 0.2 * tr.lane_change_prob


def test_env_never_initiates_off_road():
    for seed in range(300):
        w = world_of(car(0, -190, 1, role=AV), car(1, 0, 0), car(2, 60, 2), seed=seed)
        assert sim.env_policy(w, 1).ay != Lat.RIGHT
        assert sim.env_policy(w, 2).ay != Lat.LEFT


def test_env_policy_deterministic():
    w = sim.init_world(11, 15)
    assert sim.env_actions(w) == sim.env_actions(w.clone())


# --------------------------------------------------------------------------
# safety check

def test_safety_identity_on_free_road():
    w = world_of(car(0, 0, 1, role=AV))
    for a in ACTIONS:
        assert sim.safety_check(w, a) == a


def test_safety_blocks_change_into_occupied_slot():
    w = world_of(car(0, 0, 1, role=AV), car(1, 3, 2))
    out = sim.safety_check(w, act(Long.MAINTAIN, Lat.LEFT))
    assert out.ay == Lat.KEEP


def overlap_or_headway_oracle(world, action):
    """Clone, advance ego under ``action`` and every neighbour at constant speed, inspect geometry."""
    road, tr = world.road, world.traffic
    ego = world.av
    clone = world.clone()
    acts = {v.id: NOOP for v in clone.vehicles}
    acts[ego.id] = action
    # constant-velocity neighbours keep their lateral position
    for v in clone.vehicles:
        if v.id != ego.id:
            v.lc_step = 0
            v.lc_dir = 0
    nxt, events = sim.step(clone, acts)
    if any(ego.id in (e.vehicle_a, e.vehicle_b) for e in events):
        return True
    me = nxt.by_id(ego.id)
    for v in nxt.vehicles:
        if v.id != ego.id and road.lane_of(v.y) == road.lane_of(me.y) and v.x >= me.x:
            if v.x - me.x - road.vehicle_length < tr.safety_headway * me.vx + tr.safety_min_gap:
                return True
    return False


@given(st.floats(6.0, 40.0), st.floats(0.0, 10.0), st.sampled_from([Long.MAINTAIN, Long.BRAKE]))
def test_brake_upgraded_to_hard_brake_iff_lookahead_conflict(gap, closing, ax):
    lead = car(1, ROAD.vehicle_length + gap, 1, vx=15.0)
    ego = car(0, 0, 1, vx=15.0 + closing, role=AV)
    w = world_of(ego, lead)
    proposed = act(ax)
    out = sim.safety_check(w, proposed)
    conflict = overlap_or_headway_oracle(w, proposed)
    assert (out == act(Long.HARD_BRAKE)) == conflict
    assert (out == proposed) == (not conflict)


@given(st.integers(0, 10_000), st.integers(0, 11))
def test_safety_check_idempotent(seed, i):
    w = sim.init_world(seed, 15)
    once = sim.safety_check(w, ACTIONS[i])
    assert sim.safety_check(w, once) == once


# --------------------------------------------------------------------------
# init_world

def test_init_world_deterministic():
    assert sim.init_world(5, 10, True).snapshot() == sim.init_world(5, 10, True).snapshot()


@given(st.integers(0, 2**40))
def test_attacker_spawns_in_av_neighbourhood(seed):
    w = sim.init_world(seed, 10, True)
    assert w.attacker.id in sim.nearest_neighbors(w, w.av.id)


def test_twenty_cars_thousand_seeds_no_initial_collision():
    for seed in range(1000):
        w = sim.init_world(seed, 20, seed % 2 == 0)
        assert sim.detect_collisions(w) == []
        assert len({v.id for v in w.vehicles}) == len(w.vehicles)


def test_overfull_road_raises():
    with pytest.raises(ConfigurationError):
        sim.init_world(0, 200)


def test_vehicle_tuple_roundtrip():
    w = sim.init_world(9, 10, True)
    for v in w.vehicles:
        assert Vehicle.from_tuple(v.as_tuple()) == v
        assert math.isfinite(v.x)
