"""Kinematic world: teleporting end-effectors, grasp attachment and success rules."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ..se3 import Pose, compose_arr, inverse_arr, quat_rotate
from .tasks import TaskSpec

HAND_CLOSED = 0.5


def closed(hand) -> bool:
    hand = np.asarray(hand, dtype=np.float64)
    return bool(hand.size and hand.mean() < HAND_CLOSED)


@dataclass
class WorldState:
    objects: List[np.ndarray]  # 7-vectors
    ee: List[np.ndarray]
    hand: List[np.ndarray]
    attached: List[Optional[tuple]] = field(default_factory=list)  # per arm: (object, offset 7-vector)

    def __post_init__(self):
        if not self.attached:
            self.attached = [None] * len(self.ee)

    def copy(self):
        return WorldState([o.copy() for o in self.objects], [e.copy() for e in self.ee],
                          [h.copy() for h in self.hand], list(self.attached))

    def holder(self, k) -> Optional[int]:
        for a, att in enumerate(self.attached):
            if att is not None and att[0] == k:
                return a
        return None

    def object_pose(self, k) -> Pose:
        return Pose.from_array(self.objects[k])

    def ee_pose(self, a=0) -> Pose:
        return Pose.from_array(self.ee[a])


class World:
    def __init__(self, task: TaskSpec, config: Sequence[Pose], ee: Optional[Sequence] = None,
                 hand: Optional[Sequence] = None):
        self.task = task
        ee = task.home_poses() if ee is None else ee
        ee = [np.asarray(e.as_array() if isinstance(e, Pose) else e, dtype=np.float64) for e in ee]
        if hand is None:
            hand = [np.ones(task.hand_dim) for _ in ee]
        self.state = WorldState([p.as_array() for p in config], ee, [np.asarray(h, float).copy() for h in hand])
        self.init = [p.as_array() for p in config]

    def disturb(self, k: int, displacement) -> None:
        """Teleport resting object ``k`` by a world-frame displacement; held objects stay with the hand."""
        if self.state.holder(k) is not None:
            return
        d = displacement.as_array() if isinstance(displacement, Pose) else np.asarray(displacement, float)
        self.state.objects[k] = compose_arr(d, self.state.objects[k])

    def step(self, actions, hands) -> None:
        s = self.state
        for a in range(len(s.ee)):
            s.ee[a] = np.asarray(actions[a], dtype=np.float64).copy()
            att = s.attached[a]
            if att is not None:
                s.objects[att[0]] = compose_arr(s.ee[a], att[1])
        for a in range(len(s.ee)):
            s.hand[a] = np.asarray(hands[a], dtype=np.float64).copy()
            if closed(s.hand[a]):
                if s.attached[a] is None:
                    k = self._graspable_near(a)
                    if k is not None:
                        s.attached[a] = (k, compose_arr(inverse_arr(s.ee[a]), s.objects[k]))
            else:
                s.attached[a] = None

    def _graspable_near(self, a):
        s = self.state
        best, best_d = None, math.inf
        for k, spec in enumerate(self.task.objects):
            if not spec.graspable or s.holder(k) is not None:
                continue
            gp = quat_rotate(s.objects[k][3:], np.asarray(spec.grasp_point, float)) + s.objects[k][:3]
            d = float(np.linalg.norm(s.ee[a][:3] - gp))
            if d <= spec.grasp_tolerance and d < best_d:
                best, best_d = k, d
        return best


@dataclass
class Outcome:
    success: bool
    state: WorldState
    trace: list

    def write_trace(self, path) -> None:
        write_trace(self.trace, path)


def _planar(a, b):
    return float(np.hypot(a[0] - b[0], a[1] - b[1]))


def evaluate_success(task: TaskSpec, world: World, trace: list) -> bool:
    rule, p = task.success["id"], task.success.get("params", {})
    s = world.state
    if rule == "lifted":
        return all(s.holder(k) is not None and s.objects[k][2] - world.init[k][2] >= p["min_height"]
                   for k in p["objects"])
    if rule == "press":
        k = p["object"]
        for row in trace:
            obj, ee = row["objects"][k], row["ee"][0]
            if _planar(ee, obj) <= p["radius"] and ee[2] <= obj[2] + p["top"] - p["depth"]:
                return True
        return False
    if rule == "insert":
        k, tgt = p["object"], p["target"]
        if s.holder(k) is not None:
            return False
        return (_planar(s.objects[k], s.objects[tgt]) <= p["tolerance"]
                and s.objects[k][2] - s.objects[tgt][2] <= p["max_height"])
    if rule == "spread":
        k = p["object"]
        rings, sectors = p["rings"], p["sectors"]
        hit = np.zeros((rings, sectors), dtype=bool)
        for row in trace:
            obj, ee = row["objects"][k], row["ee"][0]
            if ee[2] - obj[2] > p["height"]:
                continue
            rel = quat_rotate(np.array([obj[3], -obj[4], -obj[5], -obj[6]]), ee[:3] - obj[:3])
            r = math.hypot(rel[0], rel[1])
            if not p["r_min"] <= r < p["r_max"]:
                continue
            ring = int((r - p["r_min"]) / (p["r_max"] - p["r_min"]) * rings)
            sector = int((math.atan2(rel[1], rel[0]) % (2 * math.pi)) / (2 * math.pi) * sectors) % sectors
            hit[ring, sector] = True
        return bool(hit.mean() >= p["coverage"])
    raise ValueError(f"unknown success rule {rule!r}")


def _plan_arrays(plan):
    if hasattr(plan, "arm_action"):
        return np.asarray(plan.arm_action), np.asarray(plan.hand_action)
    arm, hand = plan
    return np.asarray(arm, dtype=np.float64), np.asarray(hand, dtype=np.float64)


def execute_plan(task: TaskSpec, config: Sequence[Pose], plan, ee=None, hand=None,
                 disturbances: Optional[Sequence[dict]] = None) -> Outcome:
    """Replay absolute ee targets frame by frame.

    ``plan`` is an ActionPlan, a Demonstration (its frame-0 state and any
    recorded disturbances are used) or an ``(arm_action, hand_action)`` pair.
    Disturbances ``{"frame", "object", "displacement"}`` fire before the
    action of their frame.
    """
    arm, hands = _plan_arrays(plan)
    if ee is None and hasattr(plan, "arm_state"):
        ee = plan.arm_state[0] if plan.arm_state is not None and not np.isnan(plan.arm_state[0]).any() else None
    if hand is None and hasattr(plan, "hand_state"):
        hand = plan.hand_state[0]
    if disturbances is None and hasattr(plan, "extras"):
        disturbances = plan.extras.get("disturbances", [])
    world = World(task, config, ee, hand)
    by_frame = {}
    for d in disturbances or []:
        by_frame.setdefault(int(d["frame"]), []).append(d)
    trace = []
    for t in range(len(arm)):
        for d in by_frame.get(t, []):
            world.disturb(int(d["object"]), d["displacement"])
        s = world.state
        trace.append({"frame": t, "ee": [e.copy() for e in s.ee], "objects": [o.copy() for o in s.objects],
                      "attached": [s.holder(k) is not None for k in range(len(s.objects))]})
        world.step(arm[t], hands[t])
    s = world.state
    trace.append({"frame": len(arm), "ee": [e.copy() for e in s.ee], "objects": [o.copy() for o in s.objects],
                  "attached": [s.holder(k) is not None for k in range(len(s.objects))]})
    return Outcome(evaluate_success(task, world, trace), world.state, trace)


def write_trace(trace, path) -> None:
    if not trace:
        raise ValueError("empty trace")
    A, K = len(trace[0]["ee"]), len(trace[0]["objects"])
    axes = ("x", "y", "z", "qw", "qx", "qy", "qz")
    header = ["frame"] + [f"ee{a}_{c}" for a in range(A) for c in axes] \
        + [f"obj{k}_{c}" for k in range(K) for c in axes] + [f"obj{k}_attached" for k in range(K)]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in trace:
            w.writerow([row["frame"]] + [repr(float(v)) for e in row["ee"] for v in e]
                       + [repr(float(v)) for o in row["objects"] for v in o] + [int(x) for x in row["attached"]])
