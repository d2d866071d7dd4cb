"""Three-lane highway kinematics.

Discrete-time (dt = 1 s by default) point-mass longitudinal motion, multi-step
linear lane changes, axis-aligned rectangle collisions, and a window of road
that follows the AV: env cars that drift more than ``road_length / 2`` away are
recycled to the opposite edge so that traffic density stays constant.

Lane 0 is the rightmost lane, ``y`` grows to the left.  Vehicle ids are dense:
the AV is id 0, the attacker (when present) id 1, env cars follow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Mapping, NamedTuple, Sequence

from advhighway.rng import unit_draw


class Long(IntEnum):
    MAINTAIN = 0
    ACCELERATE = 1
    BRAKE = 2
    HARD_BRAKE = 3


class Lat(IntEnum):
    KEEP = 0
    LEFT = 1
    RIGHT = 2


class DiscreteAction(NamedTuple):
    ax: Long
    ay: Lat

    @property
    def index(self) -> int:
        return int(self.ax) * 3 + int(self.ay)

    @staticmethod
    def from_index(i: int) -> "DiscreteAction":
        return ACTIONS[i]


ACTIONS: tuple[DiscreteAction, ...] = tuple(
    DiscreteAction(Long(i // 3), Lat(i % 3)) for i in range(12)
)
N_ACTIONS = len(ACTIONS)
NOOP = ACTIONS[0]

AV, ATTACKER, ENV = "av", "attacker", "env"


class ConfigurationError(ValueError):
    """Raised for road/traffic settings the simulator cannot honour."""


@dataclass(frozen=True)
class RoadConfig:
    lane_count: int = 3
    lane_width: float = 3.6
    speed_min: float = 15.0
    speed_max: float = 30.0
    road_length: float = 400.0
    vehicle_length: float = 4.8
    vehicle_width: float = 1.8
    sensor_range: float = 100.0
    dt: float = 1.0
    accel: float = 2.0
    brake: float = -2.0
    hard_brake: float = -4.0
    lane_change_steps: int = 3

    def __post_init__(self):
        if self.lane_count != 3:
            raise ConfigurationError("lane_count is fixed at 3")
        if not self.lane_width > self.vehicle_width:
            raise ConfigurationError("lane_width must exceed vehicle_width")
        if not self.speed_min < self.speed_max:
            raise ConfigurationError("speed_min must be below speed_max")
        if self.lane_change_steps < 1:
            raise ConfigurationError("lane_change_steps must be >= 1")

    def accel_of(self, ax: int) -> float:
        return (0.0, self.accel, self.brake, self.hard_brake)[ax]

    def lane_center(self, lane: int) -> float:
        return lane * self.lane_width

    def lane_of(self, y: float) -> int:
        """Nearest lane index for a lateral position."""
        lane = int(math.floor(y / self.lane_width + 0.5))
        return min(max(lane, 0), self.lane_count - 1)

    @property
    def markers(self) -> tuple[float, ...]:
        return tuple((k + 0.5) * self.lane_width for k in range(self.lane_count - 1))


@dataclass(frozen=True)
class TrafficConfig:
    """Env-car behaviour and the AV safety filter thresholds."""

    desired_speed_min: float = 20.0
    desired_speed_max: float = 28.0
    spawn_gap: float = 12.0
    follow_headway: float = 1.5
    hard_headway: float = 0.6
    min_gap: float = 2.0
    lane_change_prob: float = 0.02
    lane_change_headway: float = 1.0
    courtesy_window: float = 30.0
    safety_headway: float = 0.5
    safety_min_gap: float = 2.5
    attacker_gap_min: float = 8.0
    attacker_gap_max: float = 30.0


@dataclass(slots=True)
class Vehicle:
    id: int
    role: str
    x: float
    y: float
    vx: float
    lane: int = 0
    lc_dir: int = 0
    lc_step: int = 0
    desired_speed: float = 0.0
    last_ax: int = 0
    last_ay: int = 0

    def copy(self) -> "Vehicle":
        return Vehicle(self.id, self.role, self.x, self.y, self.vx, self.lane,
                       self.lc_dir, self.lc_step, self.desired_speed,
                       self.last_ax, self.last_ay)

    @property
    def phase(self) -> str:
        if self.lc_step == 0:
            return "in_lane"
        return "changing_left" if self.lc_dir > 0 else "changing_right"

    def progress(self, road: RoadConfig) -> float:
        return self.lc_step / road.lane_change_steps

    @property
    def changing(self) -> bool:
        return self.lc_step > 0

    @property
    def target_lane(self) -> int:
        return self.lane + self.lc_dir

    @property
    def last_action(self) -> DiscreteAction:
        return ACTIONS[self.last_ax * 3 + self.last_ay]

    def as_tuple(self) -> tuple:
        return (self.id, self.role, self.x, self.y, self.vx, self.lane, self.lc_dir,
                self.lc_step, self.desired_speed, self.last_ax, self.last_ay)

    @staticmethod
    def from_tuple(t: Sequence) -> "Vehicle":
        return Vehicle(int(t[0]), str(t[1]), float(t[2]), float(t[3]), float(t[4]),
                       int(t[5]), int(t[6]), int(t[7]), float(t[8]), int(t[9]), int(t[10]))


@dataclass
class WorldState:
    step_index: int
    vehicles: list[Vehicle]
    seed: int
    road: RoadConfig = field(default_factory=RoadConfig)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)

    def clone(self) -> "WorldState":
        return WorldState(self.step_index, [v.copy() for v in self.vehicles],
                          self.seed, self.road, self.traffic)

    @property
    def av(self) -> Vehicle | None:
        for v in self.vehicles:
            if v.role == AV:
                return v
        return None

    @property
    def attacker(self) -> Vehicle | None:
        for v in self.vehicles:
            if v.role == ATTACKER:
                return v
        return None

    def by_id(self, vid: int) -> Vehicle:
        # ids normally equal list positions; fall back to a scan for hand-built worlds
        if 0 <= vid < len(self.vehicles) and self.vehicles[vid].id == vid:
            return self.vehicles[vid]
        for u in self.vehicles:
            if u.id == vid:
                return u
        raise KeyError(f"no vehicle with id {vid}")

    def snapshot(self) -> list[tuple]:
        return [v.as_tuple() for v in self.vehicles]


class CollisionEvent(NamedTuple):
    vehicle_a: int
    vehicle_b: int
    step_index: int


# --------------------------------------------------------------------------
# kinematics

def _longitudinal(x: float, vx: float, a: float, road: RoadConfig) -> tuple[float, float]:
    """Exact constant-acceleration update with the speed clamped to [0, speed_max]."""
    dt = road.dt
    v1 = vx + a * dt
    if v1 < 0.0:
        t = vx / -a
        return x + 0.5 * vx * t, 0.0
    if v1 > road.speed_max:
        vmax = road.speed_max
        if vx >= vmax:
            return x + vmax * dt, vmax
        t = (vmax - vx) / a
        return x + vx * t + 0.5 * a * t * t + vmax * (dt - t), vmax
    return x + vx * dt + 0.5 * a * dt * dt, v1


def _lateral(lane: int, lc_dir: int, lc_step: int, ay: int,
             road: RoadConfig) -> tuple[int, int, int]:
    n = road.lane_change_steps
    if lc_step == 0:
        if ay == Lat.LEFT and lane < road.lane_count - 1:
            lc_dir, lc_step = 1, 1
        elif ay == Lat.RIGHT and lane > 0:
            lc_dir, lc_step = -1, 1
        else:
            return lane, 0, 0
    else:
        want = 1 if ay == Lat.LEFT else (-1 if ay == Lat.RIGHT else 0)
        if want == lc_dir:
            lc_step += 1
        else:
            # keep or the opposite command unwinds the manoeuvre at the same rate
            lc_step -= 1
    if lc_step >= n:
        return lane + lc_dir, 0, 0
    if lc_step <= 0:
        return lane, 0, 0
    return lane, lc_dir, lc_step


def advance_vehicle(v: Vehicle, action: DiscreteAction, road: RoadConfig) -> Vehicle:
    ax, ay = int(action[0]), int(action[1])
    x, vx = _longitudinal(v.x, v.vx, road.accel_of(ax), road)
    lane, lc_dir, lc_step = _lateral(v.lane, v.lc_dir, v.lc_step, ay, road)
    y = (lane + lc_dir * lc_step / road.lane_change_steps) * road.lane_width
    return Vehicle(v.id, v.role, x, y, vx, lane, lc_dir, lc_step, v.desired_speed, ax, ay)


def step(world: WorldState,
         actions: Mapping[int, DiscreteAction] | Sequence[DiscreteAction],
         ) -> tuple[WorldState, list[CollisionEvent]]:
    """Advance every vehicle by one sampling period.

    Collisions are reported on the post-step geometry.  Env cars that collide
    only with other env cars are then relocated to the window edge, and env
    cars that left the window are recycled; neither affects the returned
    events.  The input world is not modified.
    """
    road = world.road
    new = WorldState(world.step_index + 1,
                     [advance_vehicle(v, actions[v.id], road) for v in world.vehicles],
                     world.seed, road, world.traffic)
    events = detect_collisions(new)
    crossed = pass_through(world, new)
    if crossed:
        events = sorted(set(events) | set(crossed))
    if events:
        _clear_env_crashes(new, events)
    _recycle(new)
    return new, events


# --------------------------------------------------------------------------
# geometry queries

def detect_collisions(world: WorldState) -> list[CollisionEvent]:
    road = world.road
    length, width = road.vehicle_length, road.vehicle_width
    vs = sorted(world.vehicles, key=lambda v: v.x)
    events = []
    n = len(vs)
    for i in range(n):
        a = vs[i]
        for j in range(i + 1, n):
            b = vs[j]
            if b.x - a.x >= length:
                break
            if abs(b.y - a.y) < width:
                lo, hi = (a.id, b.id) if a.id < b.id else (b.id, a.id)
                events.append(CollisionEvent(lo, hi, world.step_index))
    events.sort()
    return events


def pass_through(before: WorldState, after: WorldState) -> list[CollisionEvent]:
    """Pairs that swapped longitudinal order during the step while laterally overlapping.

    With a one-second sampling period a fast car can jump clean over a slow one
    without the end-point rectangles ever overlapping; the swept footprints did.
    """
    road = after.road
    width = road.vehicle_width
    reach = 2.0 * road.speed_max * road.dt + road.vehicle_length
    pre = sorted(before.vehicles, key=lambda v: v.x)
    post = {v.id: v for v in after.vehicles}
    out = []
    n = len(pre)
    for i in range(n):
        a = pre[i]
        a2 = post[a.id]
        for j in range(i + 1, n):
            b = pre[j]
            if b.x - a.x > reach:
                break
            b2 = post[b.id]
            if a.x < b.x and a2.x > b2.x and abs(a2.y - b2.y) < width and abs(a.y - b.y) < width:
                lo, hi = (a.id, b.id) if a.id < b.id else (b.id, a.id)
                out.append(CollisionEvent(lo, hi, after.step_index))
    return out


def on_marker(vehicle: Vehicle, road: RoadConfig) -> bool:
    lo = vehicle.y - 0.5 * road.vehicle_width
    hi = vehicle.y + 0.5 * road.vehicle_width
    return any(lo <= m <= hi for m in road.markers)


def marker_index(vehicle: Vehicle, road: RoadConfig) -> int | None:
    lo = vehicle.y - 0.5 * road.vehicle_width
    hi = vehicle.y + 0.5 * road.vehicle_width
    for k, m in enumerate(road.markers):
        if lo <= m <= hi:
            return k
    return None


def nearest_neighbors(world: WorldState, ego_id: int) -> list[int | None]:
    """Nearest car ahead and behind in each lane, within sensor range.

    Slot ``2 * lane + side`` with side 0 = ahead, 1 = behind.  A car level
    with the ego (zero gap) counts as ahead.  Ties on distance go to the lower id.
    """
    road = world.road
    ego = world.by_id(ego_id)
    rng = road.sensor_range
    best: list[int | None] = [None] * 6
    dist = [math.inf] * 6
    ex = ego.x
    for v in world.vehicles:
        if v.id == ego_id:
            continue
        dx = v.x - ex
        adx = abs(dx)
        if adx > rng:
            continue
        slot = 2 * road.lane_of(v.y) + (0 if dx >= 0.0 else 1)
        if adx < dist[slot] or (adx == dist[slot] and v.id < best[slot]):
            dist[slot] = adx
            best[slot] = v.id
    return best


def occupied_lanes(v: Vehicle) -> tuple[int, ...]:
    return (v.lane, v.lane + v.lc_dir) if v.lc_step else (v.lane,)


# --------------------------------------------------------------------------
# env-car driver

def _leader(world: WorldState, v: Vehicle, lanes: tuple[int, ...]):
    best, gap = None, math.inf
    for u in world.vehicles:
        if u is v:
            continue
        dx = u.x - v.x
        if dx < 0.0 or (dx == 0.0 and u.id < v.id):
            continue
        if dx < gap and any(l in lanes for l in occupied_lanes(u)):
            best, gap = u, dx
    return best


def _gap_ok(world: WorldState, v: Vehicle, target: int) -> bool:
    road, tr = world.road, world.traffic
    length = road.vehicle_length
    beyond = target + (target - v.lane)
    for u in world.vehicles:
        if u is v:
            continue
        lanes = occupied_lanes(u)
        dx = u.x - v.x
        if target in lanes:
            if dx >= 0.0:
                need = tr.lane_change_headway * v.vx + tr.min_gap
                if dx - length + (u.vx - v.vx) * road.dt < need:
                    return False
            else:
                need = tr.lane_change_headway * u.vx + tr.min_gap
                if -dx - length + (v.vx - u.vx) * road.dt < need:
                    return False
        elif beyond in lanes and abs(dx) < tr.courtesy_window:
            # a car two lanes over might merge into the same gap
            return False
    return True


def env_policy(world: WorldState, vehicle_id: int) -> DiscreteAction:
    """Headway car-follower with seeded random lane changes."""
    road, tr = world.road, world.traffic
    v = world.by_id(vehicle_id)
    vx = v.vx
    lanes = occupied_lanes(v)
    lead = _leader(world, v, lanes)
    ax = Long.MAINTAIN
    if vx < v.desired_speed - 1.0:
        ax = Long.ACCELERATE
    elif vx > v.desired_speed + 1.0:
        ax = Long.BRAKE
    if lead is not None:
        gap = lead.x - v.x - road.vehicle_length
        gap_next = gap + (lead.vx - vx) * road.dt
        closing = max(0.0, vx - lead.vx)
        if gap_next < tr.hard_headway * vx + tr.min_gap + closing * closing / (-2.0 * road.hard_brake):
            ax = Long.HARD_BRAKE
        elif gap_next < tr.follow_headway * vx + tr.min_gap + closing * closing / (-2.0 * road.brake):
            ax = Long.BRAKE
        elif ax == Long.ACCELERATE and gap_next - road.accel * road.dt < tr.follow_headway * (vx + road.accel) + tr.min_gap:
            ax = Long.MAINTAIN

    if v.lc_step:
        ay = Lat.LEFT if v.lc_dir > 0 else Lat.RIGHT
        return ACTIONS[int(ax) * 3 + int(ay)]

    ay = Lat.KEEP
    if unit_draw(world.seed, world.step_index, vehicle_id, 0) < tr.lane_change_prob:
        go_left = unit_draw(world.seed, world.step_index, vehicle_id, 1) < 0.5
        if v.lane == 0:
            go_left = True
        elif v.lane == road.lane_count - 1:
            go_left = False
        target = v.lane + (1 if go_left else -1)
        if ax != Long.HARD_BRAKE and _gap_ok(world, v, target):
            ay = Lat.LEFT if go_left else Lat.RIGHT
    return ACTIONS[int(ax) * 3 + int(ay)]


def env_actions(world: WorldState) -> dict[int, DiscreteAction]:
    return {v.id: env_policy(world, v.id) for v in world.vehicles if v.role == ENV}


# --------------------------------------------------------------------------
# short-horizon safety filter

def _predicts_conflict(world: WorldState, ego: Vehicle, action: DiscreteAction) -> bool:
    """One step ahead: ego under ``action``, neighbours at constant speed in their current lane position."""
    road, tr = world.road, world.traffic
    length, width, dt = road.vehicle_length, road.vehicle_width, road.dt
    nxt = advance_vehicle(ego, action, road)
    lateral = action.ay != Lat.KEEP or ego.lc_step > 0
    # the lane(s) the ego straddles or is heading for; neighbours count only in their current lane
    my_lanes = set(occupied_lanes(nxt)) | {road.lane_of(nxt.y)}
    for nid in nearest_neighbors(world, ego.id):
        if nid is None:
            continue
        u = world.by_id(nid)
        ux = u.x + u.vx * dt
        dx = ux - nxt.x
        if abs(u.y - nxt.y) < width:
            # overlap, or passing straight through it within one sampling period
            if abs(dx) < length or (u.x - ego.x >= 0.0) != (dx >= 0.0):
                return True
        if road.lane_of(u.y) in my_lanes:
            if dx >= 0.0:
                if dx - length < tr.safety_headway * nxt.vx + tr.safety_min_gap:
                    return True
            elif lateral and -dx - length < tr.safety_headway * u.vx + tr.safety_min_gap:
                return True
    return False


def abandon_lat(v: Vehicle) -> Lat:
    # ``keep`` unwinds an ongoing change and is a no-op in lane
    return Lat.KEEP


def safety_check(world: WorldState, av_action: DiscreteAction,
                 vehicle_id: int | None = None) -> DiscreteAction:
    """Return ``av_action`` if it looks safe one step ahead, else a fallback.

    Fallback order: keep the longitudinal command but abandon the lane change,
    and if that is still unsafe (or no lateral manoeuvre is involved) hard
    brake.
    """
    ego = world.av if vehicle_id is None else world.by_id(vehicle_id)
    av_action = ACTIONS[int(av_action[0]) * 3 + int(av_action[1])]
    if not _predicts_conflict(world, ego, av_action):
        return av_action
    lat = abandon_lat(ego)
    if av_action.ay != Lat.KEEP or ego.lc_step > 0:
        alt = ACTIONS[int(av_action.ax) * 3 + int(lat)]
        if alt != av_action and not _predicts_conflict(world, ego, alt):
            return alt
    return ACTIONS[int(Long.HARD_BRAKE) * 3 + int(lat)]


# --------------------------------------------------------------------------
# spawning and recycling

def _spot_free(world: WorldState, x: float, lane: int, gap: float, skip: int = -1) -> bool:
    road = world.road
    for u in world.vehicles:
        if u.id == skip:
            continue
        if lane in occupied_lanes(u) and abs(u.x - x) < road.vehicle_length + gap:
            return False
    return True


def _relocate(world: WorldState, v: Vehicle, x: float, salt: int) -> None:
    """Move env car ``v`` near longitudinal position ``x`` into a free lane slot."""
    road, tr = world.road, world.traffic
    start = int(unit_draw(world.seed, world.step_index, v.id, salt) * road.lane_count)
    direction = 1.0 if x >= _anchor(world) else -1.0
    for shift in range(50):
        xs = x + direction * shift * (road.vehicle_length + tr.spawn_gap)
        for k in range(road.lane_count):
            lane = (start + k) % road.lane_count
            if _spot_free(world, xs, lane, tr.spawn_gap, skip=v.id):
                v.x, v.lane, v.lc_dir, v.lc_step = xs, lane, 0, 0
                v.y = road.lane_center(lane)
                return
    raise ConfigurationError("could not find a free slot to recycle an env car")


def _anchor(world: WorldState) -> float:
    av = world.av
    return av.x if av is not None else 0.0


def _clear_env_crashes(world: WorldState, events: list[CollisionEvent]) -> None:
    crashed = set()
    for e in events:
        a, b = world.by_id(e.vehicle_a), world.by_id(e.vehicle_b)
        if a.role == ENV and b.role == ENV:
            crashed.update((a.id, b.id))
    if not crashed:
        return
    half = 0.5 * world.road.road_length
    anchor = _anchor(world)
    for vid in sorted(crashed):
        v = world.by_id(vid)
        behind = unit_draw(world.seed, world.step_index, vid, 7) < 0.5
        _relocate(world, v, anchor - half if behind else anchor + half - world.road.vehicle_length, 11)


def _recycle(world: WorldState) -> None:
    av = world.av
    if av is None:
        return
    road = world.road
    half = 0.5 * road.road_length
    for v in world.vehicles:
        if v.role != ENV:
            continue
        rel = v.x - av.x
        if rel > half:
            _relocate(world, v, v.x - road.road_length, 13)
        elif rel < -half:
            _relocate(world, v, v.x + road.road_length, 13)


def init_world(seed: int, n_env_cars: int = 10, with_attacker: bool = False,
               road: RoadConfig | None = None, traffic: TrafficConfig | None = None,
               max_tries: int = 1000) -> WorldState:
    """Non-overlapping random traffic around an AV at x = 0.

    The attacker, when requested, is placed in one of the AV's six neighbour
    slots, and no env car is allowed between it and the AV in that lane.
    """
    road = road or RoadConfig()
    traffic = traffic or TrafficConfig()
    world = WorldState(0, [], seed, road, traffic)
    draw = iter(range(10 ** 9))

    def u() -> float:
        return unit_draw(seed, -1, 0, next(draw))

    def speed() -> float:
        return traffic.desired_speed_min + u() * (traffic.desired_speed_max - traffic.desired_speed_min)

    av_lane = int(u() * road.lane_count)
    av = Vehicle(0, AV, 0.0, road.lane_center(av_lane), speed(), av_lane)
    world.vehicles.append(av)

    blocked: tuple[int, float, float] | None = None
    if with_attacker:
        lane = int(u() * road.lane_count)
        ahead = u() < 0.5
        dist = traffic.attacker_gap_min + u() * (traffic.attacker_gap_max - traffic.attacker_gap_min)
        if lane == av_lane:
            dist = max(dist, road.vehicle_length + traffic.spawn_gap)
        x = dist if ahead else -dist
        world.vehicles.append(Vehicle(1, ATTACKER, x, road.lane_center(lane),
                                      av.vx + (u() - 0.5) * 4.0, lane))
        blocked = (lane, min(0.0, x), max(0.0, x))

    half = 0.5 * road.road_length
    for k in range(n_env_cars):
        vid = len(world.vehicles)
        for _ in range(max_tries):
            lane = int(u() * road.lane_count)
            x = (u() * 2.0 - 1.0) * (half - road.vehicle_length)
            if blocked and lane == blocked[0] and blocked[1] - road.vehicle_length <= x <= blocked[2] + road.vehicle_length:
                continue
            if _spot_free(world, x, lane, traffic.spawn_gap):
                break
        else:
            raise ConfigurationError(
                f"could not place {n_env_cars} env cars on a {road.road_length} m road")
        desired = speed()
        world.vehicles.append(Vehicle(vid, ENV, x, road.lane_center(lane),
                                      desired + (u() - 0.5) * 2.0, lane, desired_speed=desired))
    return world
