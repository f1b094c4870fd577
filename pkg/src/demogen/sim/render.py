"""Single-view point clouds of a world state.

Each entity (object or end-effector) owns a fixed set of dense surface
samples in its own frame. Rendering keeps the samples that can see the
camera, farthest-point samples them in the entity frame, then maps them to
the world, so an entity that has not changed visibility yields the same
local points every frame.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import replace
from typing import List, Optional, Sequence

import numpy as np

from ..pointcloud import EE, LabeledCloud, fps_indices
from ..se3 import Pose
from ..shapes import Primitive, largest_remainder
from .tasks import TaskSpec
from .world import WorldState

NOISE_SIGMA = 0.0015
DENSE = 4
EE_WEIGHT = 0.5
CACHE = 4096


def finger_gap(h) -> float:
    v = float(np.clip(np.mean(h), 0.0, 1.0)) if np.size(h) else 1.0
    return 0.012 + 0.068 * v


def tool_parts(tool: str, hand) -> List[Primitive]:
    """Tool geometry in the ee frame; local +z points from the wrist to the fingertips."""
    gap = finger_gap(hand) if tool == "gripper" else finger_gap(0.0)
    lift = 0.0 if tool == "gripper" else -0.15
    parts = [
        Primitive("box", (0.01, 0.02, 0.05), Pose.from_translation(gap / 2 + 0.005, 0, lift - 0.025)),
        Primitive("box", (0.01, 0.02, 0.05), Pose.from_translation(-gap / 2 - 0.005, 0, lift - 0.025)),
        Primitive("box", (0.10, 0.03, 0.02), Pose.from_translation(0, 0, lift - 0.06)),
        Primitive("cylinder", (0.025, 0.06), Pose.from_translation(0, 0, lift - 0.10)),
    ]
    if tool == "spoon":
        parts += [Primitive("box", (0.01, 0.01, 0.14), Pose.from_translation(0, 0, -0.075)),
                  Primitive("cylinder", (0.02, 0.006), Pose.from_translation(0, 0, 0.0))]
    return parts


class Renderer:
    """Reusable renderer for one task; caches dense samples and FPS selections."""

    def __init__(self, task: TaskSpec, n_points: Optional[int] = None, visibility: bool = True,
                 camera: Optional[Pose] = None, dense: int = DENSE):
        self.task = task
        self.n = int(n_points or task.n_points)
        if self.n < 1:
            raise ValueError("n_points must be >= 1")
        self.visibility = visibility
        self.camera = task.camera if camera is None else camera
        self.dense = dense
        arms = task.arms
        weights = [o.area for o in task.objects] + \
            [EE_WEIGHT * sum(p.area for p in tool_parts(task.tool, np.ones(task.hand_dim))) for _ in range(arms)]
        self.budget = largest_remainder(weights, self.n)
        self._obj_samples = [self._dense_local(o.parts, self.budget[k], 1000 + k)
                             for k, o in enumerate(task.objects)]
        self._tool_cache = {}
        self._fps = OrderedDict()

    def _dense_local(self, parts, budget, seed):
        """Dense samples per part in the entity frame, with the part index of each sample."""
        rng = np.random.default_rng(seed)
        areas = np.array([p.area for p in parts])
        counts = largest_remainder(areas, max(int(budget) * self.dense, 8 * len(parts)))
        pts, owner = [], []
        for i, (p, c) in enumerate(zip(parts, counts)):
            pts.append(p.sample(int(c), rng))
            owner.append(np.full(int(c), i))
        return np.concatenate(pts), np.concatenate(owner)

    def _tool(self, arm, hand):
        key = (arm, round(finger_gap(hand) if self.task.tool == "gripper" else 0.0, 9))
        if key not in self._tool_cache:
            parts = tool_parts(self.task.tool, hand)
            pts, owner = self._dense_local(parts, self.budget[self.task.K + arm], 2000 + arm)
            self._tool_cache[key] = (parts, pts, owner)
        return self._tool_cache[key]

    def _select(self, key, local, visible, budget):
        idx = np.flatnonzero(visible)
        if len(idx) == 0 or budget == 0:
            return np.zeros(0, dtype=np.int64)
        ck = (key, idx.tobytes())
        hit = self._fps.get(ck)
        if hit is None:
            hit = idx[fps_indices(local[idx], int(budget))]
            self._fps[ck] = hit
            if len(self._fps) > CACHE:
                self._fps.popitem(last=False)
        else:
            self._fps.move_to_end(ck)
        return hit

    def render(self, state: WorldState, noise_seed: Optional[int] = None, frame: int = 0) -> LabeledCloud:
        task = self.task
        entities = []  # (key, label, pose, local points, budget, world primitives)
        for k in range(task.K):
            pose = state.object_pose(k)
            local, _ = self._obj_samples[k]
            prims = [Primitive(p.shape, p.size, pose @ p.pose) for p in task.objects[k].parts]
            entities.append((("obj", k), k, pose, local, self.budget[k], prims))
        for a in range(len(state.ee)):
            pose = state.ee_pose(a)
            parts, local, _ = self._tool(a, state.hand[a])
            prims = [Primitive(p.shape, p.size, pose @ p.pose) for p in parts]
            key = ("ee", a, round(finger_gap(state.hand[a]), 9))
            entities.append((key, EE, pose, local, self.budget[task.K + a], prims))
        all_prims = [p for e in entities for p in e[5]]
        eye = self.camera.position
        pts, labels = [], []
        for key, label, pose, local, budget, _ in entities:
            world = pose.apply(local)
            if self.visibility:
                ray = eye - world
                dist = np.linalg.norm(ray, axis=1)
                ray /= dist[:, None]
                visible = np.ones(len(world), dtype=bool)
                for prim in all_prims:
                    if not visible.any():
                        break
                    sel = np.flatnonzero(visible)
                    visible[sel] &= ~prim.ray_hits(world[sel], ray[sel], dist[sel])
            else:
                visible = np.ones(len(world), dtype=bool)
            chosen = self._select(key, local, visible, budget)
            pts.append(world[chosen])
            labels.append(np.full(len(chosen), label))
        points = np.concatenate(pts) if pts else np.zeros((0, 3))
        labels = np.concatenate(labels) if labels else np.zeros(0, dtype=np.int32)
        if len(points) < self.n and len(points):
            rep = np.arange(self.n) % len(points)
            points, labels = points[rep], labels[rep]
        if noise_seed is not None:
            rng = np.random.default_rng([int(noise_seed), int(frame)])
            jitter = np.clip(rng.normal(0.0, NOISE_SIGMA, points.shape), -3 * NOISE_SIGMA, 3 * NOISE_SIGMA)
            points = points + jitter
        return LabeledCloud(points, labels)


def render_cloud(state: WorldState, task: TaskSpec, camera: Optional[Pose] = None, n_points: Optional[int] = None,
                 visibility: bool = True, noise_seed: Optional[int] = None) -> LabeledCloud:
    return Renderer(task, n_points, visibility, camera).render(state, noise_seed)


def empty_scene(task: TaskSpec) -> TaskSpec:
    """Copy of ``task`` without objects, for rendering the end-effector alone."""
    return replace(task, objects=[], demo_range=[], eval_range=[], arm_object_map=[[] for _ in range(task.arms)])


def render_many(renderer: Renderer, states: Sequence[WorldState], noise_seed=None) -> List[LabeledCloud]:
    return [renderer.render(s, noise_seed, t) for t, s in enumerate(states)]
