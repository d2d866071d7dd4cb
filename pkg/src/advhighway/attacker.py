"""Adversarial vehicle: observation, one-step reward, episodes and DDQN training."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from advhighway import sim
from advhighway.av import FrozenPolicy, RewardParams, neighbor_features, obs_scaling, reward_av
from advhighway.dqn import (DivergenceError, DualReplay, Learner, TrainConfig, Transition,
                            UnderfilledBuffer, act, epsilon_at, greedy, train_step)
from advhighway.judge import Verdict, judge
from advhighway.qnet import Checkpoint, QNetwork, forward
from advhighway.rng import derive_seed
from advhighway.sim import (ACTIONS, DiscreteAction, RoadConfig, TrafficConfig, WorldState)

ATTACKER_OBS_DIM = 24
TIME_COST = 0.05
CRASH_PENALTY = -1.0
LEAVE_PENALTY = -1.0

AV_CRASHED = "av_crashed"
ATTACKER_CRASHED = "attacker_crashed"
AV_LEFT = "av_left_neighborhood"
TIMEOUT = "timeout"
TERMINATIONS = (AV_CRASHED, ATTACKER_CRASHED, AV_LEFT, TIMEOUT)


def attacker_scaling(road: RoadConfig) -> tuple[np.ndarray, np.ndarray]:
    offset, scale = obs_scaling(road)
    # AV ax index, AV ay index, AV slot (k in 0..5, -5 when absent), AV-in-range flag
    return (np.concatenate([offset, [1.5, 1.0, 0.0, 0.0]]),
            np.concatenate([scale, [1.5, 1.0, 5.0, 1.0]]))


def raw_attacker_observation(world: WorldState, av_action: DiscreteAction) -> np.ndarray:
    """Reads public vehicle state and the AV's emitted action only."""
    att, av = world.attacker, world.av
    slots = sim.nearest_neighbors(world, att.id)
    feats = neighbor_features(world, att.id, slots)
    av_slot = slots.index(av.id) if av.id in slots else None
    return np.array([att.y, att.vx] + feats + [
        float(av_action[0]), float(av_action[1]),
        float(av_slot) if av_slot is not None else -5.0,
        1.0 if av_slot is not None else 0.0,
    ])


def observe_attacker(world: WorldState, av_action: DiscreteAction, scaling=None) -> np.ndarray:
    offset, scale = scaling if scaling is not None else attacker_scaling(world.road)
    return (raw_attacker_observation(world, av_action) - offset) / scale


def av_in_range(world: WorldState) -> bool:
    return world.av.id in sim.nearest_neighbors(world, world.attacker.id)


# --------------------------------------------------------------------------
# reward

@dataclass(frozen=True)
class StepScore:
    reward: float
    verdict: Verdict | None
    terminate: bool
    cause: str | None
    partner: int | None = None


def score_transition(before: WorldState, after: WorldState,
                     events: list[sim.CollisionEvent]) -> StepScore:
    """Attacker reward for the step ``before -> after`` (collisions in ``events``)."""
    av_id = after.av.id
    att = after.attacker
    att_id = att.id if att is not None else None
    av_events = [e for e in events if av_id in (e.vehicle_a, e.vehicle_b)]
    if av_events:
        # lowest partner id first, so an AV/attacker crash is the one judged
        e = min(av_events, key=lambda e: e.vehicle_b if e.vehicle_a == av_id else e.vehicle_a)
        partner = e.vehicle_b if e.vehicle_a == av_id else e.vehicle_a
        verdict = judge(before, after, e.vehicle_a, e.vehicle_b, av_id)
        if partner == att_id and not verdict.av_at_fault:
            # the attacker hit the AV and carries the blame: its own crash, verdict kept for the record
            return StepScore(CRASH_PENALTY - TIME_COST, verdict, True, ATTACKER_CRASHED, partner)
        return StepScore(verdict.attacker_reward - TIME_COST, verdict, True, AV_CRASHED, partner)
    if att_id is not None:
        if any(att_id in (e.vehicle_a, e.vehicle_b) for e in events):
            return StepScore(CRASH_PENALTY - TIME_COST, None, True, ATTACKER_CRASHED)
        if not av_in_range(after):
            return StepScore(LEAVE_PENALTY - TIME_COST, None, True, AV_LEFT)
    return StepScore(-TIME_COST, None, False, None)


def lookahead_reward(world: WorldState, joint_actions) -> tuple[float, Verdict | None, bool]:
    """Score ``joint_actions`` by simulating one step on a clone; ``world`` is untouched."""
    after, events = sim.step(world.clone(), joint_actions)
    score = score_transition(world, after, events)
    return score.reward, score.verdict, score.terminate


# --------------------------------------------------------------------------
# episodes

class AttackerPolicy(Protocol):
    def __call__(self, observation: np.ndarray) -> DiscreteAction: ...


@dataclass
class GreedyAttacker:
    net: QNetwork
    obs_offset: np.ndarray
    obs_scale: np.ndarray

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint) -> "GreedyAttacker":
        return cls(ck.net, ck.obs_offset, ck.obs_scale)

    def observe(self, world: WorldState, av_action: DiscreteAction) -> np.ndarray:
        return (raw_attacker_observation(world, av_action) - self.obs_offset) / self.obs_scale

    def __call__(self, observation: np.ndarray) -> DiscreteAction:
        return ACTIONS[greedy(forward(self.net, observation))]


@dataclass
class AttackerEpisodeOutcome:
    termination: str
    steps: int
    cumulative_reward: float
    verdict: Verdict | None = None
    partner: int | None = None
    attacker_involved: bool = False


@dataclass
class EpisodeTrace:
    header: dict
    records: list[dict] = field(default_factory=list)
    footer: dict = field(default_factory=dict)


def _encode_actions(actions, n: int) -> list[list[int]]:
    return [[int(actions[i][0]), int(actions[i][1])] for i in range(n)]


def run_episode(world: WorldState, frozen_av: FrozenPolicy, attacker: AttackerPolicy | None = None,
                T: int = 200, reward_params: RewardParams | None = None,
                header: dict | None = None, record: bool = True,
                ) -> tuple[AttackerEpisodeOutcome, EpisodeTrace]:
    """Roll the world forward until the first termination cause or ``T`` steps."""
    reward_params = reward_params or RewardParams()
    trace = EpisodeTrace(dict(header or {}))
    with_attacker = attacker is not None and world.attacker is not None
    total = 0.0
    outcome = None
    for t in range(T):
        av_action = frozen_av.act(world)
        actions = sim.env_actions(world)
        actions[world.av.id] = av_action
        if with_attacker:
            obs = (attacker.observe(world, av_action) if hasattr(attacker, "observe")
                   else observe_attacker(world, av_action))
            actions[world.attacker.id] = attacker(obs)
        elif world.attacker is not None:
            actions[world.attacker.id] = sim.NOOP
        after, events = sim.step(world, actions)
        score = score_transition(world, after, events)
        av_hit = score.verdict is not None
        r_av = reward_av(world, after, av_hit, reward_params)
        r_att = score.reward if with_attacker else None
        if record:
            trace.records.append({"t": t, "state": world.snapshot(),
                                  "actions": _encode_actions(actions, len(world.vehicles)),
                                  "av_reward": r_av, "attacker_reward": r_att})
        world = after
        if with_attacker:
            total += score.reward
            if score.terminate:
                outcome = AttackerEpisodeOutcome(score.cause, t + 1, total, score.verdict, score.partner)
                break
        elif av_hit:
            outcome = AttackerEpisodeOutcome(score.cause, t + 1, total, score.verdict, score.partner)
            break
    if outcome is None:
        outcome = AttackerEpisodeOutcome(TIMEOUT, T, total)
    att = world.attacker
    outcome.attacker_involved = (outcome.partner is not None and att is not None
                                 and outcome.partner == att.id)
    trace.footer = {"termination": outcome.termination, "steps": outcome.steps,
                    "cumulative_reward": outcome.cumulative_reward if with_attacker else None,
                    "verdict": outcome.verdict.to_dict() if outcome.verdict else None,
                    "failure_code": outcome.verdict.failure_code if outcome.verdict else None,
                    "partner": outcome.partner,
                    "attacker_involved": outcome.attacker_involved,
                    "final_state": world.snapshot() if record else None}
    return outcome, trace


def replay_trace(trace: EpisodeTrace, road: RoadConfig, traffic: TrafficConfig) -> bool:
    """Feed the recorded action stream through a fresh world; True iff every state matches exactly."""
    h = trace.header
    world = sim.init_world(int(h["seed"]), int(h["n_env_cars"]), bool(h["with_attacker"]), road, traffic)
    for rec in trace.records:
        if world.snapshot() != [tuple(v) for v in rec["state"]]:
            return False
        actions = [ACTIONS[ax * 3 + ay] for ax, ay in rec["actions"]]
        world, _ = sim.step(world, actions)
    return world.snapshot() == [tuple(v) for v in trace.footer["final_state"]]


# --------------------------------------------------------------------------
# training

@dataclass
class AttackerTrainResult:
    checkpoint: Checkpoint
    curve: list[tuple[int, float, float]] = field(default_factory=list)
    at_fault_episodes: int = 0


def evaluate_attacker(net: QNetwork, frozen_av: FrozenPolicy, seeds, *, n_env_cars: int,
                      road: RoadConfig, traffic: TrafficConfig, T: int,
                      reward_params: RewardParams | None = None) -> list[float]:
    offset, scale = attacker_scaling(road)
    policy = GreedyAttacker(net, offset, scale)
    returns = []
    for seed in seeds:
        world = sim.init_world(seed, n_env_cars, True, road, traffic)
        outcome, _ = run_episode(world, frozen_av, policy, T, reward_params, record=False)
        returns.append(outcome.cumulative_reward)
    return returns


def train_attacker(cfg: TrainConfig, frozen_av: FrozenPolicy, *, road: RoadConfig | None = None,
                   traffic: TrafficConfig | None = None, n_env_cars: int = 10,
                   eval_every: int = 100, eval_rollouts: int = 10,
                   progress: Callable[[int, float, float], None] | None = None) -> AttackerTrainResult:
    """DDQN against a frozen AV; evaluates ``eval_rollouts`` greedy episodes every ``eval_every`` episodes."""
    road = road or RoadConfig()
    traffic = traffic or TrafficConfig()
    offset, scale = attacker_scaling(road)
    learner = Learner.create(ATTACKER_OBS_DIM, cfg)
    dual = DualReplay.create(cfg, ATTACKER_OBS_DIM)
    rng = random.Random(cfg.seed)
    result = AttackerTrainResult(None)
    T = cfg.steps_per_episode
    k = 0
    for ep in range(cfg.episodes):
        world = sim.init_world(derive_seed(cfg.seed, 2, ep), n_env_cars, True, road, traffic)
        av_action = frozen_av.act(world)
        s = (raw_attacker_observation(world, av_action) - offset) / scale
        episode = []
        verdict = None
        for t in range(T):
            a = ACTIONS[act(learner.online, s, epsilon_at(cfg, k), rng)]
            actions = sim.env_actions(world)
            actions[world.av.id] = av_action
            actions[world.attacker.id] = a
            after, events = sim.step(world, actions)
            score = score_transition(world, after, events)
            world = after
            if not score.terminate:
                av_action = frozen_av.act(world)
            s_next = (raw_attacker_observation(world, av_action) - offset) / scale
            episode.append(Transition(s, a.index, score.reward, s_next, score.terminate))
            s = s_next
            k += 1
            if k % cfg.train_every == 0:
                try:
                    train_step(learner, dual, cfg)
                except UnderfilledBuffer:
                    pass
            if score.terminate:
                verdict = score.verdict
                break
        if not learner.online.all_finite():
            raise DivergenceError(f"attacker network diverged in episode {ep}")
        at_fault = verdict is not None and verdict.av_at_fault and 2 <= verdict.failure_code <= 7
        result.at_fault_episodes += at_fault
        dual.add_episode(episode, at_fault_crash=at_fault)
        if (ep + 1) % eval_every == 0:
            seeds = [derive_seed(cfg.seed, 3, ep + 1, i) for i in range(eval_rollouts)]
            rets = evaluate_attacker(learner.online, frozen_av, seeds, n_env_cars=n_env_cars,
                                     road=road, traffic=traffic, T=T)
            mean, std = float(np.mean(rets)), float(np.std(rets))
            result.curve.append((ep + 1, mean, std))
            if progress is not None:
                progress(ep + 1, mean, std)
    result.checkpoint = Checkpoint(learner.online.copy(), offset, scale, cfg.to_dict(),
                                   {"role": "attacker", "obs_dim": ATTACKER_OBS_DIM})
    return result
