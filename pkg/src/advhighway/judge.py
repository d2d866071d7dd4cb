"""Crash responsibility and failure codes.

A lightweight responsibility model over a single pre-crash state: lane-marker
occupancy decides the situation, the situation decides who is responsible and
which single evasive action (hard brake, or abandoning the lane change) that
car was expected to take.  The responsible car's action is read from the
crash state, where each vehicle records the action that produced it.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from advhighway.sim import (DiscreteAction, Lat, Long, Vehicle, WorldState, marker_index,
                            on_marker)


class Situation(str, Enum):
    NONE_ON_MARKER = "none_on_marker"
    ONE_ON_MARKER_ORIGINAL_LANE = "one_on_marker_crash_original_lane"
    ONE_ON_MARKER_TARGET_LANE = "one_on_marker_crash_target_lane"
    BOTH_ON_SAME_MARKER = "both_on_same_marker"
    BOTH_ON_DIFFERENT_MARKERS = "both_on_different_markers"


class Family(str, Enum):
    REAR_END = "rear_end"
    TARGET_LANE = "target_lane"
    DIFFERENT_MARKERS = "different_markers"


FAMILY = {
    Situation.NONE_ON_MARKER: Family.REAR_END,
    Situation.ONE_ON_MARKER_ORIGINAL_LANE: Family.REAR_END,
    Situation.BOTH_ON_SAME_MARKER: Family.REAR_END,
    Situation.ONE_ON_MARKER_TARGET_LANE: Family.TARGET_LANE,
    Situation.BOTH_ON_DIFFERENT_MARKERS: Family.DIFFERENT_MARKERS,
}

HARD_BRAKE = "hard_brake"
ABANDON = "abandon_lane_change"

MEE_EXPECTED = {
    Family.REAR_END: HARD_BRAKE,
    Family.TARGET_LANE: ABANDON,
    Family.DIFFERENT_MARKERS: ABANDON,
}

# (fault is AV, MEE used) -> (failure code, attacker reward)
REWARD_TABLE: dict[Family, dict[tuple[bool, bool], tuple[int, float]]] = {
    Family.REAR_END: {(False, False): (0, -1.0), (False, True): (1, -0.5),
                      (True, False): (2, 1.0), (True, True): (3, 0.5)},
    Family.TARGET_LANE: {(False, False): (0, -1.0), (False, True): (1, -0.5),
                         (True, False): (4, 1.0), (True, True): (5, 0.5)},
    Family.DIFFERENT_MARKERS: {(False, False): (0, -0.8), (False, True): (1, -0.3),
                               (True, False): (6, 0.8), (True, True): (7, 0.3)},
}


@dataclass(frozen=True)
class Verdict:
    situation: Situation
    responsible: int
    principal_shared: bool
    av_at_fault: bool
    mee_expected: str
    mee_used: bool
    failure_code: int
    attacker_reward: float

    def to_dict(self) -> dict:
        return {"situation": self.situation.value, "responsible": self.responsible,
                "principal_shared": self.principal_shared, "av_at_fault": self.av_at_fault,
                "mee_expected": self.mee_expected, "mee_used": self.mee_used,
                "failure_code": self.failure_code, "attacker_reward": self.attacker_reward}

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        return cls(Situation(d["situation"]), int(d["responsible"]), bool(d["principal_shared"]),
                   bool(d["av_at_fault"]), str(d["mee_expected"]), bool(d["mee_used"]),
                   int(d["failure_code"]), float(d["attacker_reward"]))


def classify_situation(s_pre: WorldState, a_id: int, b_id: int) -> Situation:
    road = s_pre.road
    a, b = s_pre.by_id(a_id), s_pre.by_id(b_id)
    ma, mb = marker_index(a, road), marker_index(b, road)
    if ma is None and mb is None:
        return Situation.NONE_ON_MARKER
    if ma is not None and mb is not None:
        return Situation.BOTH_ON_SAME_MARKER if ma == mb else Situation.BOTH_ON_DIFFERENT_MARKERS
    marker_car, other = (a, b) if ma is not None else (b, a)
    if road.lane_of(other.y) == _target_lane(marker_car, road):
        return Situation.ONE_ON_MARKER_TARGET_LANE
    return Situation.ONE_ON_MARKER_ORIGINAL_LANE


def _target_lane(v: Vehicle, road) -> int:
    if v.lc_step:
        return v.lane + v.lc_dir
    # on a marker without an active change (custom geometry); the far side of the marker is the target
    own = road.lane_center(v.lane)
    return v.lane + (1 if v.y > own else -1)


def _rear(a: Vehicle, b: Vehicle) -> Vehicle:
    if a.x != b.x:
        return a if a.x < b.x else b
    return a if a.id < b.id else b


def responsible_party(situation: Situation, s_pre: WorldState, a_id: int, b_id: int) -> tuple[int, bool]:
    a, b = s_pre.by_id(a_id), s_pre.by_id(b_id)
    fam = FAMILY[situation]
    if fam is Family.REAR_END:
        return _rear(a, b).id, False
    if fam is Family.TARGET_LANE:
        road = s_pre.road
        return (a.id if on_marker(a, road) else b.id), False
    # different markers: the car coming from the left is the principal
    if a.y != b.y:
        return (a.id if a.y > b.y else b.id), True
    return min(a.id, b.id), True


def mee_check(situation: Situation, action: DiscreteAction, vehicle: Vehicle | None = None) -> bool:
    """Did ``action`` (taken from the pre-crash state by ``vehicle``) match the expected evasive effort?"""
    if MEE_EXPECTED[FAMILY[situation]] == HARD_BRAKE:
        return action.ax == Long.HARD_BRAKE
    # abandon: any lateral command other than continuing the change in progress
    direction = vehicle.lc_dir if vehicle is not None else 0
    if direction > 0:
        return action.ay != Lat.LEFT
    if direction < 0:
        return action.ay != Lat.RIGHT
    return action.ay == Lat.KEEP


def table_entry(situation: Situation, av_at_fault: bool, mee_used: bool) -> tuple[int, float]:
    return REWARD_TABLE[FAMILY[situation]][(av_at_fault, mee_used)]


def judge(s_pre: WorldState, s_crash: WorldState, a_id: int, b_id: int, av_id: int) -> Verdict:
    """Verdict for a collision between ``a_id`` and ``b_id`` observed in ``s_crash``.

    Crashes that do not involve the AV still get a verdict, with no attacker
    reward attached.
    """
    situation = classify_situation(s_pre, a_id, b_id)
    responsible, shared = responsible_party(situation, s_pre, a_id, b_id)
    action = s_crash.by_id(responsible).last_action
    used = mee_check(situation, action, s_pre.by_id(responsible))
    av_involved = av_id in (a_id, b_id)
    at_fault = av_involved and responsible == av_id
    code, reward = table_entry(situation, at_fault, used)
    if not av_involved:
        reward = 0.0
    return Verdict(situation, responsible, shared, at_fault,
                   MEE_EXPECTED[FAMILY[situation]], used, code, reward)
