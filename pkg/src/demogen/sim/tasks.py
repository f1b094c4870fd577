"""Task descriptions: object geometry, scripted-policy parameters, success rule, ranges."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..errors import UnreachableTarget
from ..se3 import Pose, quat_canonical, quat_mul
from ..shapes import Primitive, disk_polygon, point_in_polygon

Q_DOWN = np.array([0.0, 1.0, 0.0, 0.0])  # ee z axis pointing at the table
GRASP_TOLERANCE = 0.02


def down(yaw=0.0, position=(0.0, 0.0, 0.0)) -> Pose:
    """End-effector pose pointing down, rotated ``yaw`` about world z."""
    qz = np.array([math.cos(yaw / 2), 0.0, 0.0, math.sin(yaw / 2)])
    return Pose(position, quat_canonical(quat_mul(qz, Q_DOWN)))


def look_at(eye, target) -> Pose:
    """Camera pose with +z looking from ``eye`` at ``target`` and x roughly horizontal."""
    eye, target = np.asarray(eye, float), np.asarray(target, float)
    z = target - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, [0.0, 0.0, 1.0])
    x = x / np.linalg.norm(x) if np.linalg.norm(x) > 1e-9 else np.array([1.0, 0.0, 0.0])
    y = np.cross(z, x)
    m = np.eye(4)
    m[:3, :3] = np.stack([x, y, z], axis=1)
    m[:3, 3] = eye
    return Pose.from_matrix(m)


CAMERA_OBLIQUE = look_at((1.15, 0.0, 0.65), (0.55, 0.0, 0.0))
CAMERA_BIRDSEYE = look_at((0.55, 0.0, 1.10), (0.55, 0.0, 0.0))


@dataclass
class ObjectSpec:
    name: str
    parts: List[Primitive]  # in the object frame; the frame origin rests on the table
    graspable: bool = True
    grasp_point: tuple = (0.0, 0.0, 0.0)
    grasp_yaw: float = 0.0  # radians, ee yaw relative to the object when grasping
    grasp_tolerance: float = GRASP_TOLERANCE

    @property
    def area(self):
        return sum(p.area for p in self.parts)

    def to_json(self):
        return {"name": self.name, "parts": [p.to_json() for p in self.parts], "graspable": self.graspable,
                "grasp_point": list(self.grasp_point), "grasp_yaw_deg": math.degrees(self.grasp_yaw),
                "grasp_tolerance": self.grasp_tolerance}

    @classmethod
    def from_json(cls, d):
        return cls(d["name"], [Primitive.from_json(p) for p in d["parts"]], bool(d.get("graspable", True)),
                   tuple(d.get("grasp_point", (0, 0, 0))), math.radians(float(d.get("grasp_yaw_deg", 0.0))),
                   float(d.get("grasp_tolerance", GRASP_TOLERANCE)))


@dataclass
class TaskSpec:
    name: str
    script: str  # pick | press | pick_place | bimanual_pick | spread
    objects: List[ObjectSpec]
    success: dict  # {"id": ..., "params": {...}}
    workspace: list  # reachable xy polygon
    demo_range: list  # per object [xmin, xmax, ymin, ymax]
    eval_range: list
    arms: int = 1
    hand_dim: int = 1
    tool: str = "gripper"  # gripper | spoon
    home: Optional[list] = None  # per-arm 7-vectors
    arm_object_map: Optional[list] = None
    camera: Pose = field(default_factory=lambda: CAMERA_OBLIQUE)
    params: dict = field(default_factory=dict)
    n_points: int = 512

    def __post_init__(self):
        if self.home is None:
            if self.arms == 1:
                self.home = [down(0.0, (0.35, 0.0, 0.40)).as_array().tolist()]
            else:
                self.home = [down(0.0, (0.35, 0.25, 0.40)).as_array().tolist(),
                             down(0.0, (0.35, -0.25, 0.40)).as_array().tolist()]
        if self.arm_object_map is None:
            self.arm_object_map = [list(range(len(self.objects)))] + [[] for _ in range(self.arms - 1)]
        for d, e in zip(self.demo_range, self.eval_range):
            if not (d[0] <= e[0] and e[1] <= d[1] and d[2] <= e[2] and e[3] <= d[3]):
                raise ValueError(f"{self.name}: eval range {e} not inside demo range {d}")

    @property
    def K(self):
        return len(self.objects)

    def home_poses(self) -> List[Pose]:
        return [Pose.from_array(h) for h in self.home]

    def default_config(self) -> List[Pose]:
        """Objects at the centre of their eval ranges with zero yaw."""
        return [Pose.from_yaw(0.0, ((r[0] + r[1]) / 2, (r[2] + r[3]) / 2, 0.0)) for r in self.eval_range]

    def config(self, xy: Sequence, yaw_deg: Optional[Sequence[float]] = None) -> List[Pose]:
        xy = np.asarray(xy, dtype=np.float64).reshape(self.K, 2)
        yaw = np.zeros(self.K) if yaw_deg is None else np.radians(np.asarray(yaw_deg, dtype=np.float64))
        return [Pose.from_yaw(float(a), (x, y, 0.0)) for (x, y), a in zip(xy, yaw)]

    def reachable(self, config: Sequence[Pose]) -> bool:
        return bool(point_in_polygon([p.position[:2] for p in config], self.workspace).all())

    def in_range(self, config: Sequence[Pose], which="demo") -> bool:
        rng = self.demo_range if which == "demo" else self.eval_range
        eps = 1e-9
        return all(r[0] - eps <= p.position[0] <= r[1] + eps and r[2] - eps <= p.position[1] <= r[3] + eps
                   for p, r in zip(config, rng))

    def check_config(self, config: Sequence[Pose]):
        if len(config) != self.K:
            raise ValueError(f"{self.name} needs {self.K} object poses, got {len(config)}")
        if not self.reachable(config):
            raise UnreachableTarget(f"{self.name}: configuration outside the reachable workspace")
        if not self.in_range(config, "demo"):
            raise UnreachableTarget(f"{self.name}: configuration outside the demo range")

    def to_json(self):
        return {"name": self.name, "script": self.script, "objects": [o.to_json() for o in self.objects],
                "success": self.success, "workspace": [list(p) for p in self.workspace],
                "demo_range": self.demo_range, "eval_range": self.eval_range, "arms": self.arms,
                "hand_dim": self.hand_dim, "tool": self.tool, "home": self.home,
                "arm_object_map": self.arm_object_map, "camera": self.camera.as_array().tolist(),
                "params": self.params, "n_points": self.n_points}

    @classmethod
    def from_json(cls, d):
        known = {"name", "script", "objects", "success", "workspace", "demo_range", "eval_range", "arms",
                 "hand_dim", "tool", "home", "arm_object_map", "camera", "params", "n_points"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown task keys: {sorted(unknown)}")
        kw = dict(d)
        kw["objects"] = [ObjectSpec.from_json(o) for o in d["objects"]]
        kw["workspace"] = [tuple(p) for p in d["workspace"]]
        if "camera" in d:
            kw["camera"] = Pose.from_array(d["camera"])
        return cls(**kw)


def box(size, center=(0, 0, 0), yaw=0.0):
    return Primitive("box", size, Pose.from_yaw(yaw, center))


def cyl(r, h, center=(0, 0, 0)):
    return Primitive("cylinder", (r, h), Pose.from_translation(center))


def sphere(r, center=(0, 0, 0)):
    return Primitive("sphere", (r,), Pose.from_translation(center))


REACH = disk_polygon((0.0, 0.0), 0.85, 64)


def _pick_cube():
    return TaskSpec(
        name="pick_cube", script="pick",
        objects=[ObjectSpec("cube", [box((0.05, 0.05, 0.05), (0, 0, 0.025))], grasp_point=(0, 0, 0.025))],
        success={"id": "lifted", "params": {"objects": [0], "min_height": 0.04}},
        workspace=REACH,
        demo_range=[[0.31, 0.79, -0.24, 0.24]], eval_range=[[0.35, 0.75, -0.20, 0.20]],
        params={"lift": 0.06})


def _button(name, radius):
    return TaskSpec(
        name=name, script="press",
        objects=[ObjectSpec("button", [cyl(radius, 0.03, (0, 0, 0.015))], graspable=False,
                            grasp_point=(0, 0, 0.03))],
        success={"id": "press", "params": {"object": 0, "radius": radius, "top": 0.03, "depth": 0.005}},
        workspace=disk_polygon((0.0, 0.0), 0.72, 64),
        demo_range=[[0.38, 0.72, -0.22, 0.22]], eval_range=[[0.40, 0.70, -0.20, 0.20]],
        params={"press_depth": 0.01, "rise": 0.06})


def _peg_insert():
    peg = ObjectSpec("peg", [box((0.03, 0.03, 0.06), (0, 0, 0.03)), box((0.06, 0.06, 0.02), (0, 0, 0.07))],
                     grasp_point=(0, 0, 0.07), grasp_tolerance=0.01)
    socket = ObjectSpec("socket", [box((0.12, 0.04, 0.04), (0, 0.04, 0.02)), box((0.12, 0.04, 0.04), (0, -0.04, 0.02)),
                                   box((0.04, 0.04, 0.04), (0.04, 0, 0.02)), box((0.04, 0.04, 0.04), (-0.04, 0, 0.02))],
                        graspable=False, grasp_point=(0, 0, 0.04))
    return TaskSpec(
        name="peg_insert", script="pick_place", objects=[peg, socket],
        success={"id": "insert", "params": {"object": 0, "target": 1, "tolerance": 0.01, "max_height": 0.03}},
        workspace=REACH,
        demo_range=[[0.35, 0.75, 0.08, 0.28], [0.35, 0.75, -0.28, -0.08]],
        eval_range=[[0.37, 0.73, 0.10, 0.26], [0.37, 0.73, -0.26, -0.10]],
        params={"lift": 0.12, "place_height": 0.08, "approach": 0.12})


def _two_object_insert():
    flower = ObjectSpec("flower", [cyl(0.006, 0.14, (0, 0, 0.07)), sphere(0.025, (0, 0, 0.155))],
                        grasp_point=(0, 0, 0.07))
    vase = ObjectSpec("vase", [cyl(0.04, 0.12, (0, 0, 0.06))], graspable=False, grasp_point=(0, 0, 0.12))
    return TaskSpec(
        name="two_object_insert", script="pick_place", objects=[flower, vase],
        success={"id": "insert", "params": {"object": 0, "target": 1, "tolerance": 0.02, "max_height": 0.09}},
        workspace=REACH,
        demo_range=[[0.38, 0.72, 0.08, 0.28], [0.38, 0.72, -0.28, -0.08]],
        eval_range=[[0.40, 0.70, 0.10, 0.26], [0.40, 0.70, -0.26, -0.10]],
        params={"lift": 0.18, "place_height": 0.13, "approach": 0.12})


def _bimanual():
    banana = ObjectSpec("banana", [box((0.16, 0.035, 0.035), (0, 0, 0.0175))], grasp_point=(0, 0, 0.0175),
                        grasp_yaw=math.pi / 2)
    basket = ObjectSpec("basket", [
        box((0.20, 0.14, 0.01), (0, 0, 0.005)),
        box((0.20, 0.01, 0.06), (0, 0.065, 0.03)), box((0.20, 0.01, 0.06), (0, -0.065, 0.03)),
        box((0.01, 0.12, 0.06), (0.095, 0, 0.03)), box((0.01, 0.12, 0.06), (-0.095, 0, 0.03)),
        box((0.02, 0.14, 0.01), (0, 0, 0.085)),
        box((0.01, 0.01, 0.02), (0, 0.065, 0.07)), box((0.01, 0.01, 0.02), (0, -0.065, 0.07))],
        grasp_point=(0, 0, 0.085))
    return TaskSpec(
        name="bimanual_fruit_basket", script="bimanual_pick", objects=[banana, basket], arms=2,
        arm_object_map=[[0], [1]],
        success={"id": "lifted", "params": {"objects": [0, 1], "min_height": 0.04}},
        workspace=REACH,
        demo_range=[[0.40, 0.70, 0.13, 0.32], [0.50, 0.62, -0.30, -0.22]],
        eval_range=[[0.42, 0.68, 0.15, 0.30], [0.51, 0.61, -0.285, -0.235]],
        camera=CAMERA_BIRDSEYE,
        params={"lift": 0.05})


def _sauce_spread():
    crust = ObjectSpec("crust", [cyl(0.12, 0.01, (0, 0, 0.005))], graspable=False, grasp_point=(0, 0, 0.01))
    return TaskSpec(
        name="sauce_spread", script="spread", objects=[crust], tool="spoon",
        success={"id": "spread", "params": {"object": 0, "r_min": 0.02, "r_max": 0.08, "rings": 2,
                                            "sectors": 8, "coverage": 0.75, "height": 0.025}},
        workspace=REACH,
        demo_range=[[0.42, 0.68, -0.18, 0.18]], eval_range=[[0.45, 0.65, -0.15, 0.15]],
        params={"surface": 0.015, "r_max": 0.08, "turns": 3, "lift": 0.03})


BUILTIN = {
    "pick_cube": _pick_cube,
    "button_large": lambda: _button("button_large", 0.045),
    "button_small": lambda: _button("button_small", 0.01125),
    "peg_insert": _peg_insert,
    "two_object_insert": _two_object_insert,
    "bimanual_fruit_basket": _bimanual,
    "sauce_spread": _sauce_spread,
}
ALIASES = {"button_press": "button_large"}


def task_names() -> List[str]:
    return sorted(BUILTIN)


def load_task(name_or_path) -> TaskSpec:
    """Built-in task by name, or a TaskSpec JSON file."""
    key = ALIASES.get(str(name_or_path), str(name_or_path))
    if key in BUILTIN:
        return BUILTIN[key]()
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        return TaskSpec.from_json(json.loads(p.read_text(encoding="utf-8")))
    raise KeyError(f"unknown task {name_or_path!r}; built-in tasks: {', '.join(task_names())}")


def save_task(task: TaskSpec, path) -> None:
    Path(path).write_text(json.dumps(task.to_json(), indent=1), encoding="utf-8")


def config_to_json(config: Sequence[Pose]) -> list:
    return [p.as_array().tolist() for p in config]


def config_from_json(data) -> List[Pose]:
    return [Pose.from_array(p) for p in data]


def grasp_pose(obj: ObjectSpec, obj_pose: Pose) -> Pose:
    """World ee pose that grasps ``obj`` resting at ``obj_pose``."""
    return obj_pose @ down(obj.grasp_yaw, obj.grasp_point)


def object_dict(task: TaskSpec) -> Dict[str, int]:
    return {o.name: k for k, o in enumerate(task.objects)}
