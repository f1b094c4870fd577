"""Target sampling plus the disturbance and obstacle extensions."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .adapter import ActionPlan, ArmTrack, adapt_arm, adapt_trajectory
from .demo_store import Demonstration, check
from .errors import EmptyWorkspace, ObstacleBlocksSkill, UnreachableTarget
from .planner import CLEARANCE, MAX_ANGLE_STEP, MAX_STEP, PlanRequest, linear_plan
from .pointcloud import OBSTACLE, LabeledCloud
from .se3 import Pose, compose, quat_mul
from .segments import SKILL
from .shapes import Primitive, point_in_polygon, polygon_centroid, sample_primitive
from .synthesis import PreparedSource, prepare, synthesize_demo

__all__ = [
    "GenerationSpec", "Target", "adr_augment", "grid_targets", "obstacle_augment", "offsets",
    "perturb", "plan_dataset", "sample_primitive", "target_config",
]


def grid_targets(polygon, spacing=None, samples: Optional[int] = None) -> List[tuple]:
    """Lattice points inside ``polygon``, rows of increasing y, each row by increasing x.

    ``spacing`` is one number or ``(sx, sy)``; the lattice is centred in the
    bounding box. ``samples`` instead places that many points per axis from
    edge to edge. A lattice with a single node collapses to the centroid.
    """
    poly = np.asarray(polygon, dtype=np.float64)
    if len(poly) < 3:
        raise EmptyWorkspace("workspace polygon needs at least 3 vertices")
    lo, hi = poly.min(axis=0), poly.max(axis=0)
    if np.any(hi - lo <= 0):
        raise EmptyWorkspace("workspace polygon has no area")
    if samples is not None:
        if samples < 1:
            raise ValueError("samples must be >= 1")
        axes = [np.linspace(lo[i], hi[i], samples) if samples > 1 else np.array([(lo[i] + hi[i]) / 2])
                for i in range(2)]
    else:
        s = np.broadcast_to(np.asarray(spacing, dtype=np.float64), (2,))
        if np.any(s <= 0):
            raise ValueError("spacing must be > 0")
        axes = []
        for i in range(2):
            n = int(math.floor((hi[i] - lo[i]) / s[i] + 1e-9)) + 1
            start = lo[i] + ((hi[i] - lo[i]) - (n - 1) * s[i]) / 2
            axes.append(start + s[i] * np.arange(n))
    if len(axes[0]) == 1 and len(axes[1]) == 1:
        c = polygon_centroid(poly)
        return [(float(c[0]), float(c[1]))]
    gx, gy = np.meshgrid(axes[0], axes[1])
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    pts = pts[point_in_polygon(pts, poly)]
    if len(pts) == 0:
        raise EmptyWorkspace("no lattice point falls inside the workspace")
    return [(float(x), float(y)) for x, y in pts]


def offsets(half_extent: float, n_per_axis: int) -> List[tuple]:
    if n_per_axis < 1 or n_per_axis % 2 == 0:
        raise ValueError("n_per_axis must be odd so the centre is kept")
    if n_per_axis == 1:
        return [(0.0, 0.0)]
    v = np.linspace(-half_extent, half_extent, n_per_axis)
    return [(float(dx), float(dy)) for dy in v for dx in v]


def _shift(coord, d):
    """Offset one target (a single xy or per-object tuple) by ``d`` applied to every object."""
    if not _nested(coord):
        return tuple(float(v) for v in (coord[0] + d[0], coord[1] + d[1], *coord[2:]))
    return tuple(tuple(float(v) for v in (o[0] + d[0], o[1] + d[1], *o[2:])) for o in coord)


def _nested(coord):
    return len(coord) > 0 and isinstance(coord[0], (list, tuple, np.ndarray))


def perturb(targets, half_extent: float, n_per_axis: int) -> list:
    offs = offsets(half_extent, n_per_axis)
    return [_shift(t, d) for t in targets for d in offs]


@dataclass(frozen=True)
class Target:
    source: int
    coords: tuple  # per object (x, y) or (x, y, yaw_deg relative to the source)
    eval_index: int = 0
    offset_index: int = 0


def _as_objects(coord):
    rows = coord if _nested(coord) else [coord]
    return [np.asarray(r, dtype=np.float64) for r in rows]


def target_config(source_init: Sequence[Pose], coords) -> List[Pose]:
    """Poses for ``coords``: xy replaced, height kept, optional yaw about the vertical through the new position."""
    c = _as_objects(coords)
    if len(c) != len(source_init):
        raise ValueError(f"{len(c)} coordinates for {len(source_init)} objects")
    out = []
    for p, row in zip(source_init, c):
        pos = (row[0], row[1], p.position[2])
        if len(row) > 2 and row[2] != 0:
            out.append(Pose(pos, quat_mul(Pose.from_yaw(math.radians(row[2])).quat, p.quat)))
        else:
            out.append(Pose(pos, p.quat))
    return out


@dataclass
class GenerationSpec:
    """What to generate; see the README for the JSON form."""

    eval_grid: list
    grid_spacing: float = 0.15
    perturb_offsets: list = field(default_factory=lambda: [(0.0, 0.0)])
    num_sources: int = 1
    adr: Optional[dict] = None
    obstacle: Optional[dict] = None
    planner: dict = field(default_factory=dict)
    workspace: Optional[list] = None
    task: Optional[str] = None
    seed: int = 0

    @property
    def expected_count(self):
        return self.num_sources * len(self.eval_grid) * len(self.perturb_offsets)

    def plan_request(self) -> PlanRequest:
        p = dict(self.planner)
        if "max_angle_step_deg" in p:
            p["max_angle_step"] = math.radians(p.pop("max_angle_step_deg"))
        unknown = set(p) - {"max_step", "max_angle_step", "clearance", "rng_seed", "max_iterations"}
        if unknown:
            raise ValueError(f"unknown planner keys: {sorted(unknown)}")
        return PlanRequest(Pose.identity(), Pose.identity(), **{"rng_seed": self.seed, **p})

    @classmethod
    def from_json(cls, d: dict) -> "GenerationSpec":
        known = {"eval_grid", "grid_spacing", "perturb_offsets", "perturb", "num_sources", "adr", "obstacle",
                 "planner", "workspace", "task", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generation spec keys: {sorted(unknown)}")
        d = dict(d)
        grid = d.pop("eval_grid")
        if isinstance(grid, dict):
            poly = grid.get("workspace") or _rect(grid["rect"])
            grid = grid_targets(poly, grid.get("spacing", d.get("grid_spacing")), grid.get("samples"))
        pert = d.pop("perturb", None)
        if pert is not None:
            d["perturb_offsets"] = offsets(pert["half_extent"], pert["n_per_axis"])
        if "perturb_offsets" in d:
            d["perturb_offsets"] = [tuple(o) for o in d["perturb_offsets"]]
        spec = cls(eval_grid=[_freeze(g) for g in grid], **d)
        if spec.num_sources < 1:
            raise ValueError("num_sources must be >= 1")
        return spec

    @classmethod
    def load(cls, path) -> "GenerationSpec":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_json(self):
        return {"eval_grid": [list(map(list, g)) if isinstance(g[0], tuple) else list(g) for g in self.eval_grid],
                "grid_spacing": self.grid_spacing, "perturb_offsets": [list(o) for o in self.perturb_offsets],
                "num_sources": self.num_sources, "adr": self.adr, "obstacle": self.obstacle,
                "planner": self.planner, "workspace": self.workspace, "task": self.task, "seed": self.seed}


def _rect(r):
    x0, x1, y0, y1 = r
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


def _freeze(g):
    if isinstance(g, (list, tuple)) and g and isinstance(g[0], (list, tuple)):
        return tuple(tuple(float(v) for v in o) for o in g)
    return tuple(float(v) for v in g)


def plan_dataset(spec: GenerationSpec) -> List[Target]:
    """Every (source, eval target, offset) combination, source-major."""
    out = []
    for s in range(spec.num_sources):
        for i, g in enumerate(spec.eval_grid):
            for j, d in enumerate(spec.perturb_offsets):
                out.append(Target(s, _shift(g, d), i, j))
    return out


# -- disturbance resistance ---------------------------------------------------------


def _object_pose_at(prep: PreparedSource, k: int, t: int) -> Pose:
    tr = prep.tracks[k, t]
    if np.isnan(tr[0]):
        raise ValueError(f"object {k} is held at frame {t}; only resting objects can be displaced")
    return compose(Pose.from_array(tr), prep.demo.init_config[k])


def adr_augment(demo: Demonstration, object_id: int, t_d: int, displacement: Pose, pause: int = 5,
                prepared: Optional[PreparedSource] = None, planner: Optional[PlanRequest] = None,
                workspace=None) -> Demonstration:
    """Displace ``object_id`` at frame ``t_d`` and splice in a pause plus a re-approach.

    Frames before ``t_d`` are kept bit for bit. The arm then holds still for
    ``pause`` frames, moves straight to the displaced continuation pose, and
    resumes the interrupted skill carried along by ``displacement``.
    """
    prep = prepared if prepared is not None else prepare(demo)
    seg = prep.seg
    arm, skill = seg.skill_of(object_id)
    if not skill.t_start <= t_d <= skill.t_end or t_d < 1:
        raise ValueError(f"t_d={t_d} outside the skill of object {object_id} [{skill.t_start}, {skill.t_end}]")
    if pause < 0:
        raise ValueError("pause must be >= 0")
    previous = demo.extras.get("disturbances", [])
    if any(int(d["frame"]) >= t_d for d in previous):
        raise ValueError("disturbances must be added in time order")
    delta = displacement
    now = _object_pose_at(prep, object_id, t_d)
    if workspace is not None and not point_in_polygon([compose(delta, now).position[:2]], workspace).all():
        raise UnreachableTarget("displaced object leaves the reachable workspace")
    planner = planner or PlanRequest(Pose.identity(), Pose.identity())
    A, K = demo.arms, demo.K
    deltas = {k: Pose.identity() for k in range(K)}
    deltas[object_id] = delta

    tracks, states = [], []
    for a in range(A):
        segs = seg[a]
        ordinal_of = np.empty(demo.L, dtype=np.int64)
        for j, s in enumerate(segs):
            ordinal_of[s.t_start:s.t_end + 1] = j
        pre = np.arange(t_d)
        prefix = ArmTrack(demo.arm_action[pre, a].copy(), demo.hand_action[pre, a].copy(), pre,
                          ordinal_of[pre], np.zeros(t_d, bool))
        hold_pose = demo.arm_state[t_d, a]
        hand = demo.hand_action[t_d - 1, a]
        if a == arm:
            reach = linear_plan(planner.between(Pose.from_array(hold_pose), compose(delta, Pose.from_array(hold_pose))))[1:]
        else:
            reach = np.zeros((0, 7))
        inserted_actions = np.concatenate([np.repeat(hold_pose[None], pause, axis=0), reach])
        n_ins = len(inserted_actions)
        if a == arm:
            spliced = n_ins
        inserted = ArmTrack(inserted_actions, np.repeat(hand[None], n_ins, axis=0), np.full(n_ins, t_d),
                            np.full(n_ins, ordinal_of[t_d]), np.ones(n_ins, bool))
        ins_states = np.concatenate([hold_pose[None], inserted_actions[:-1]]) if n_ins else np.zeros((0, 7))
        j = int(ordinal_of[t_d])
        rest_segs = list(segs[j:])
        first = rest_segs[0]
        rest_segs[0] = type(first)(first.kind, first.object_id, t_d, first.t_end)
        if a == arm:
            rest = adapt_arm(demo, a, rest_segs, deltas, planner, base_ordinal=j)
        else:
            fr = np.arange(t_d, demo.L)
            rest = ArmTrack(demo.arm_action[fr, a].copy(), demo.hand_action[fr, a].copy(), fr, ordinal_of[fr],
                            np.zeros(len(fr), bool))
        tracks.append(ArmTrack.concat([prefix, inserted, rest]))
        st = np.full((len(tracks[-1]), 7), np.nan)
        st[t_d:t_d + n_ins] = ins_states
        states.append(st)

    plan = ActionPlan.from_tracks(tracks, seg.arms, deltas)
    Lp = plan.length
    explicit = np.full((Lp, A, 7), np.nan)
    for a in range(A):
        explicit[:len(states[a]), a] = states[a]
    plan.arm_state = explicit
    obj = np.zeros((Lp, K, 7))
    obj[..., 3] = 1.0
    obj[t_d:, object_id] = delta.as_array()
    extras = json.loads(json.dumps(demo.extras))
    extras["source"] = False
    extras.setdefault("disturbances", []).append(
        {"frame": int(t_d), "object": int(object_id), "displacement": delta.as_array().tolist()})
    extras.setdefault("adr", []).append({"frame": int(t_d), "pause": int(pause), "inserted": int(spliced)})
    return synthesize_demo(demo, seg, demo.init_config, plan, prepared=prep, object_deltas=obj, extras=extras)


def resume_frame(demo: Demonstration, k: int = -1) -> int:
    """Output frame at which the ``k``-th spliced re-approach hands back to the skill."""
    rec = demo.extras["adr"][k]
    return int(rec["frame"]) + int(rec["inserted"])


# -- obstacles ------------------------------------------------------------------------


def obstacle_cloud(primitives: Sequence[Primitive], n_points: int = 256, seed: int = 0) -> LabeledCloud:
    return LabeledCloud.concat(sample_primitive(p, n_points, seed + i) for i, p in enumerate(primitives))


def obstacle_augment(demo: Demonstration, primitives: Sequence[Primitive], clearance: float = CLEARANCE,
                     n_points: int = 256, seed: int = 0, prepared: Optional[PreparedSource] = None,
                     planner: Optional[PlanRequest] = None) -> Demonstration:
    """Fuse sampled obstacle points into every frame and replan the free-space motions around them."""
    if not primitives:
        return demo.copy()
    prep = prepared if prepared is not None else prepare(demo)
    cloud = obstacle_cloud(primitives, n_points, seed)
    obst = cloud.points.astype(np.float64)
    tree = cKDTree(obst)
    for a in range(demo.arms):
        for s in prep.seg[a]:
            if s.kind != SKILL or s.empty:
                continue
            d, _ = tree.query(demo.arm_action[s.t_start:s.t_end + 1, a, :3])
            if d.min() < clearance:
                raise ObstacleBlocksSkill(
                    f"skill on object {s.object_id} passes {d.min():.3f} m from an obstacle (clearance {clearance})")
    base = planner or PlanRequest(Pose.identity(), Pose.identity(), MAX_STEP, MAX_ANGLE_STEP)
    req = replace(base, obstacles=cloud, clearance=clearance)
    plan = adapt_trajectory(demo, prep.seg, demo.init_config, req, force_replan=True)
    extras = json.loads(json.dumps(demo.extras))
    extras["source"] = False
    extras["obstacles"] = {"primitives": [p.to_json() for p in primitives], "clearance": clearance,
                           "points_per_primitive": n_points, "seed": seed}
    out = synthesize_demo(demo, prep.seg, demo.init_config, plan, prepared=prep, extras=extras, validate=False)
    M = len(cloud)
    out.points = np.concatenate([out.points, np.broadcast_to(cloud.points, (out.L, M, 3))], axis=1)
    out.labels = np.concatenate([out.labels, np.full(M, OBSTACLE, dtype=np.int32)])
    return check(out)
