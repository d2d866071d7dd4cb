"""Victim AV: observation, reward, training in attacker-free traffic, frozen policy."""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from advhighway import sim
from advhighway.dqn import (DivergenceError, DualReplay, Learner, TrainConfig, Transition,
                            UnderfilledBuffer, act, epsilon_at, greedy, train_step)
from advhighway.qnet import Checkpoint, QNetwork, forward
from advhighway.rng import derive_seed
from advhighway.sim import ACTIONS, DiscreteAction, RoadConfig, TrafficConfig, WorldState

log = logging.getLogger(__name__)

AV_OBS_DIM = 20


@dataclass(frozen=True)
class RewardParams:
    """``dx_safe = max(dx_safe_min, dx_safe_headway * vx)``; ``y_des=None`` means the occupied/target lane centre."""

    dx_safe_min: float = 10.0
    dx_safe_headway: float = 1.0
    v_des: float = 28.0
    y_norm: float = 10.0
    v_norm: float = 10.0
    y_des: float | None = None

    def __post_init__(self):
        if not (self.dx_safe_min > 0 and self.v_des > 0 and self.y_norm > 0 and self.v_norm > 0):
            raise ValueError("reward parameters must be strictly positive")
        if self.dx_safe_headway < 0 or (self.y_des is not None and self.y_des < 0):
            raise ValueError("dx_safe_headway and y_des must be non-negative")

    def dx_safe(self, vx: float) -> float:
        return max(self.dx_safe_min, self.dx_safe_headway * vx)


def obs_scaling(road: RoadConfig, n_slots: int = 6) -> tuple[np.ndarray, np.ndarray]:
    """Affine map ``obs = (raw - offset) / scale`` into roughly [-1, 1]."""
    mid_y = 0.5 * (road.lane_count - 1) * road.lane_width
    half_v = 0.5 * road.speed_max
    offset = [mid_y, half_v] + [0.0, 0.0, 0.0] * n_slots
    scale = [mid_y, half_v] + [road.sensor_range, 2.0 * mid_y, road.speed_max] * n_slots
    return np.array(offset), np.array(scale)


def neighbor_features(world: WorldState, ego_id: int, slots=None) -> list[float]:
    """Raw (dx, dy, dvx) for the six canonical slots; empty slots saturate at sensor range."""
    road = world.road
    ego = world.by_id(ego_id)
    if slots is None:
        slots = sim.nearest_neighbors(world, ego_id)
    feats = []
    for k, nid in enumerate(slots):
        if nid is None:
            feats += [road.sensor_range if k % 2 == 0 else -road.sensor_range, 0.0, 0.0]
        else:
            u = world.by_id(nid)
            feats += [u.x - ego.x, u.y - ego.y, u.vx - ego.vx]
    return feats


def raw_av_observation(world: WorldState) -> np.ndarray:
    av = world.av
    return np.array([av.y, av.vx] + neighbor_features(world, av.id))


def observe_av(world: WorldState, scaling=None) -> np.ndarray:
    offset, scale = scaling if scaling is not None else obs_scaling(world.road)
    return (raw_av_observation(world) - offset) / scale


# --------------------------------------------------------------------------
# reward

def lead_gap(world: WorldState, vid: int) -> float | None:
    """Bumper gap to the nearest car ahead in the vehicle's lane, within sensor range."""
    road = world.road
    ego = world.by_id(vid)
    lane = road.lane_of(ego.y)
    best = None
    for u in world.vehicles:
        if u.id == vid:
            continue
        dx = u.x - ego.x
        if 0.0 <= dx <= road.sensor_range and road.lane_of(u.y) == lane:
            if best is None or dx < best:
                best = dx
    return None if best is None else best - road.vehicle_length


def reward_terms(dx: float | None, dx_safe: float, y: float, y_des: float, vx: float,
                 params: RewardParams) -> tuple[float, float, float]:
    if dx is None or dx >= dx_safe:
        r_x = 0.0
    else:
        r_x = math.exp(-(dx - dx_safe) ** 2 / (10.0 * dx_safe)) - 1.0
    r_y = math.exp(-(y - y_des) ** 2 / params.y_norm) - 1.0
    r_v = math.exp(-(vx - params.v_des) ** 2 / params.v_norm) - 1.0
    return r_x, r_y, r_v


COLLISION_REWARD = -2.0


def reward_av(world_before: WorldState, world_after: WorldState, collided: bool,
              params: RewardParams) -> float:
    if collided:
        return COLLISION_REWARD
    road = world_after.road
    before, av = world_before.av, world_after.av
    if params.y_des is not None:
        y_des = params.y_des
    else:
        y_des = road.lane_center(av.target_lane if av.lc_step else av.lane)
    r_x, r_y, r_v = reward_terms(lead_gap(world_after, av.id), params.dx_safe(before.vx),
                                 av.y, y_des, av.vx, params)
    return (r_x + r_y + r_v) / 3.0


# --------------------------------------------------------------------------
# frozen policy

@dataclass
class FrozenPolicy:
    """Greedy AV policy; optionally filtered by the short-horizon safety check."""

    net: QNetwork
    obs_offset: np.ndarray
    obs_scale: np.ndarray
    safety: bool = True

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint, safety: bool = True) -> "FrozenPolicy":
        return cls(ck.net, ck.obs_offset, ck.obs_scale, safety)

    def greedy(self, observation: np.ndarray) -> DiscreteAction:
        return ACTIONS[greedy(forward(self.net, observation))]

    def observe(self, world: WorldState) -> np.ndarray:
        return (raw_av_observation(world) - self.obs_offset) / self.obs_scale

    def act(self, world: WorldState) -> DiscreteAction:
        a = self.greedy(self.observe(world))
        if self.safety:
            a = sim.safety_check(world, a)
        return a


def frozen_policy(policy: FrozenPolicy, observation: np.ndarray,
                  world: WorldState | None = None) -> DiscreteAction:
    """Greedy action for ``observation``; passes through the safety check when a world is given."""
    a = policy.greedy(observation)
    if policy.safety and world is not None:
        a = sim.safety_check(world, a)
    return a


# --------------------------------------------------------------------------
# training

@dataclass
class AvTrainResult:
    checkpoint: Checkpoint
    episode_returns: list[float] = field(default_factory=list)
    episode_crashes: list[bool] = field(default_factory=list)
    # (episode, validation crashes, mean per-step reward) for each selection round
    validation: list[tuple[int, int, float]] = field(default_factory=list)
    selected_episode: int | None = None


def validate_av(net: QNetwork, offset: np.ndarray, scale: np.ndarray, seeds, *, n_env_cars: int,
                road: RoadConfig, traffic: TrafficConfig, reward: RewardParams, safety: bool,
                T: int) -> tuple[int, float]:
    """Greedy rollouts: (episodes ending in an AV collision, mean per-step reward)."""
    policy = FrozenPolicy(net, offset, scale, safety)
    crashes, total, steps = 0, 0.0, 0
    for seed in seeds:
        world = sim.init_world(seed, n_env_cars, False, road, traffic)
        for _ in range(T):
            actions = sim.env_actions(world)
            actions[world.av.id] = policy.act(world)
            nxt, events = sim.step(world, actions)
            hit = any(world.av.id in (e.vehicle_a, e.vehicle_b) for e in events)
            total += reward_av(world, nxt, hit, reward)
            steps += 1
            world = nxt
            if hit:
                crashes += 1
                break
    return crashes, total / max(steps, 1)


def train_av(cfg: TrainConfig, *, road: RoadConfig | None = None, traffic: TrafficConfig | None = None,
             reward: RewardParams | None = None, n_env_cars: int = 10, safety: bool = True,
             progress: Callable[[int, float], None] | None = None) -> AvTrainResult:
    """DDQN on the attacker-free highway; episodes stop early on any AV collision."""
    road = road or RoadConfig()
    traffic = traffic or TrafficConfig()
    reward = reward or RewardParams()
    offset, scale = obs_scaling(road)
    learner = Learner.create(AV_OBS_DIM, cfg)
    dual = DualReplay.create(cfg, AV_OBS_DIM)
    rng = random.Random(cfg.seed)
    result = AvTrainResult(None)
    best_net, best_score = None, None
    val_seeds = [derive_seed(cfg.seed, 5, i) for i in range(cfg.select_rollouts)]
    k = 0
    for ep in range(cfg.episodes):
        world = sim.init_world(derive_seed(cfg.seed, 1, ep), n_env_cars, False, road, traffic)
        s = (raw_av_observation(world) - offset) / scale
        episode, ret, crashed = [], 0.0, False
        for t in range(cfg.steps_per_episode):
            a = ACTIONS[act(learner.online, s, epsilon_at(cfg, k), rng)]
            if safety:
                a = sim.safety_check(world, a)
            actions = sim.env_actions(world)
            actions[world.av.id] = a
            nxt, events = sim.step(world, actions)
            crashed = any(world.av.id in (e.vehicle_a, e.vehicle_b) for e in events)
            r = reward_av(world, nxt, crashed, reward)
            s_next = (raw_av_observation(nxt) - offset) / scale
            episode.append(Transition(s, a.index, r, s_next, crashed))
            ret += r
            k += 1
            world, s = nxt, s_next
            if k % cfg.train_every == 0:
                try:
                    train_step(learner, dual, cfg)
                except UnderfilledBuffer:
                    pass
            if crashed:
                break
        if not learner.online.all_finite():
            raise DivergenceError(f"AV network diverged in episode {ep}")
        dual.add_episode(episode, at_fault_crash=crashed)
        result.episode_returns.append(ret)
        result.episode_crashes.append(crashed)
        if progress is not None:
            progress(ep, ret)
        if cfg.select_every and cfg.select_rollouts and (ep + 1) % cfg.select_every == 0:
            crashes, mean_r = validate_av(learner.online, offset, scale, val_seeds, n_env_cars=n_env_cars,
                                          road=road, traffic=traffic, reward=reward, safety=safety,
                                          T=cfg.steps_per_episode)
            result.validation.append((ep + 1, crashes, mean_r))
            # fewest validation crashes, then the best per-step reward; ties keep the earlier network
            score = (-crashes, mean_r)
            if best_score is None or score > best_score:
                best_net, best_score, result.selected_episode = learner.online.copy(), score, ep + 1
    net = best_net if best_net is not None else learner.online.copy()
    meta = {"role": "av", "obs_dim": AV_OBS_DIM}
    if result.selected_episode is not None:
        meta["selected_episode"] = result.selected_episode
    result.checkpoint = Checkpoint(net, offset, scale, cfg.to_dict(), meta)
    return result
