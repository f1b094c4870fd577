"""Scripted source policies and demo capture."""
from __future__ import annotations

import math
from typing import Optional, Sequence, Tuple

import numpy as np

from ..demo_store import Demonstration, check
from ..parser import parse
from ..planner import PlanRequest, linear_plan
from ..se3 import Pose
from .render import Renderer
from .tasks import TaskSpec, down, grasp_pose
from .world import World

STEP = 0.009  # scripted motion stays under the 1 cm / 5 deg per-frame limits
ANGLE_STEP = math.radians(4.5)
OPEN, CLOSED = 1.0, 0.0
GRIP_FRAMES = 4
SETTLE = 3


class Script:
    """Accumulates (ee pose, hand) keyframes for one arm."""

    def __init__(self, start: Pose, hand: float, H: int):
        self.poses = [start.as_array()]
        self.hands = [np.full(H, hand)]
        self.H = H

    @property
    def pose(self):
        return Pose.from_array(self.poses[-1])

    def move(self, goal: Pose):
        path = linear_plan(PlanRequest(self.pose, goal, STEP, ANGLE_STEP))
        for p in path[1:]:
            self.poses.append(p)
            self.hands.append(self.hands[-1].copy())

    def path(self, poses):
        for p in poses:
            self.poses.append(np.asarray(p, float))
            self.hands.append(self.hands[-1].copy())

    def hold(self, n):
        for _ in range(n):
            self.poses.append(self.poses[-1].copy())
            self.hands.append(self.hands[-1].copy())

    def grip(self, value, n=GRIP_FRAMES):
        start = float(self.hands[-1].mean()) if self.H else value
        for i in range(1, n + 1):
            self.poses.append(self.poses[-1].copy())
            self.hands.append(np.full(self.H, start + (value - start) * i / n))

    def arrays(self):
        # actions: the pose commanded at each frame is the next keyframe
        return np.array(self.poses[1:]), np.array(self.hands[1:])


def _above(p: Pose, dz):
    return Pose(p.position + (0, 0, dz), p.quat)


def _pick(s: Script, task, obj_k, obj_pose, clear, lift):
    g = grasp_pose(task.objects[obj_k], obj_pose)
    s.move(_above(g, clear))
    s.move(g)
    s.grip(CLOSED)
    s.move(_above(g, lift))


def script_actions(task: TaskSpec, config: Sequence[Pose]) -> Tuple[np.ndarray, np.ndarray]:
    """(L, A, 7) ee targets and (L, A, H) hand commands for the task's scripted policy."""
    p = task.params
    homes = task.home_poses()
    H = task.hand_dim
    clear = p.get("clear", 0.15)
    if task.script == "pick":
        s = Script(homes[0], OPEN, H)
        _pick(s, task, 0, config[0], clear, p.get("lift", 0.06))
        s.hold(SETTLE)
        scripts = [s]
    elif task.script == "press":
        s = Script(homes[0], CLOSED, H)
        top = config[0] @ down(0.0, task.objects[0].grasp_point)
        s.move(_above(top, clear))
        s.move(_above(top, -p.get("press_depth", 0.01)))
        s.hold(SETTLE)
        s.move(_above(top, p.get("rise", 0.06)))
        scripts = [s]
    elif task.script == "pick_place":
        s = Script(homes[0], OPEN, H)
        _pick(s, task, 0, config[0], clear, p["lift"])
        place = config[1] @ down(task.objects[0].grasp_yaw, (0, 0, p["place_height"]))
        s.move(_above(place, p.get("approach", 0.12)))
        s.move(place)
        s.grip(OPEN)
        s.move(_above(place, p.get("retreat", 0.04)))
        scripts = [s]
    elif task.script == "bimanual_pick":
        scripts = []
        for a, objs in enumerate(task.arm_object_map):
            s = Script(homes[a], OPEN, H)
            for k in objs:
                _pick(s, task, k, config[k], clear, p.get("lift", 0.05))
            s.hold(SETTLE)
            scripts.append(s)
    elif task.script == "spread":
        s = Script(homes[0], CLOSED, H)
        centre = config[0] @ down(0.0, (0, 0, p.get("surface", 0.015)))
        s.move(_above(centre, clear))
        s.move(centre)
        s.path(spiral(config[0], p.get("surface", 0.015), p.get("r_max", 0.08), p.get("turns", 3))[1:])
        s.move(_above(s.pose, p.get("lift", 0.03)))
        s.hold(SETTLE)
        scripts = [s]
    else:
        raise ValueError(f"unknown script {task.script!r}")
    arrays = [sc.arrays() for sc in scripts]
    L = max(len(a[0]) for a in arrays)
    pad = lambda x: np.concatenate([x, np.repeat(x[-1:], L - len(x), axis=0)])  # noqa: E731
    arm = np.stack([pad(a[0]) for a in arrays], axis=1)
    hand = np.stack([pad(a[1]) for a in arrays], axis=1)
    return arm, hand


def spiral(obj_pose: Pose, height, r_max, turns, step=0.008) -> np.ndarray:
    """Archimedean spiral of ee poses over the object, evenly spaced by arc length."""
    theta_max = 2 * math.pi * turns
    fine = np.linspace(0.0, theta_max, 20000)
    r = r_max * fine / theta_max
    local = np.stack([r * np.cos(fine), r * np.sin(fine)], axis=1)
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(local, axis=0), axis=1))])
    n = int(math.ceil(arc[-1] / step))
    s = np.linspace(0.0, arc[-1], n + 1)
    xy = np.stack([np.interp(s, arc, local[:, 0]), np.interp(s, arc, local[:, 1])], axis=1)
    out = [(obj_pose @ down(0.0, (x, y, height))).as_array() for x, y in xy]
    return np.array(out)


def scripted_demo(task: TaskSpec, config: Optional[Sequence[Pose]] = None, noise_seed: Optional[int] = 0,
                  n_points: Optional[int] = None, visibility: bool = True, pad_to: Optional[int] = None,
                  renderer: Optional[Renderer] = None, return_labels: bool = False):
    """Run the scripted policy from ``config`` and record one demonstration.

    ``pad_to`` extends the trajectory by holding the final command.
    With ``return_labels`` the ground-truth label array of every frame is
    returned alongside.
    """
    config = task.default_config() if config is None else list(config)
    task.check_config(config)
    arm, hand = script_actions(task, config)
    if pad_to is not None and pad_to > len(arm):
        extra = pad_to - len(arm)
        arm = np.concatenate([arm, np.repeat(arm[-1:], extra, axis=0)])
        hand = np.concatenate([hand, np.repeat(hand[-1:], extra, axis=0)])
    renderer = renderer or Renderer(task, n_points)
    if renderer.visibility != visibility:
        renderer = Renderer(task, n_points, visibility)
    world = World(task, config, hand=list(hand[0]))
    L, A = arm.shape[:2]
    clouds, labels, states, hstates = [], [], [], []
    for t in range(L):
        s = world.state
        states.append(np.stack(s.ee))
        hstates.append(np.stack(s.hand))
        c = renderer.render(s, noise_seed, t)
        clouds.append(c.points)
        labels.append(c.labels)
        world.step(arm[t], hand[t])
    demo = Demonstration(
        points=np.stack(clouds), labels=labels[0], arm_state=np.stack(states), hand_state=np.stack(hstates),
        arm_action=arm, hand_action=hand, init_config=config,
        object_names=[o.name for o in task.objects], task=task.name,
        arm_object_map=[list(m) for m in task.arm_object_map], camera=renderer.camera,
        extras={"noise_seed": noise_seed, "source": True})
    demo.segment_index = parse(demo)
    check(demo)
    if return_labels:
        return demo, np.stack(labels)
    return demo
