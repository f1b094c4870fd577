"""Free-space end-effector paths: straight interpolation and RRT-Connect around point obstacles.

Paths come back as ``(M, 7)`` pose arrays (position + wxyz quaternion).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import PlanningFailed, StartOrGoalInCollision
from .pointcloud import LabeledCloud
from .se3 import Pose, interpolate_arr, quat_angle, quat_slerp

MAX_STEP = 0.01
MAX_ANGLE_STEP = math.radians(5.0)
CLEARANCE = 0.06
MAX_ITERATIONS = 50_000
SHORTCUTS = 100
EDGE_RES = 0.0025


@dataclass(frozen=True)
class PlanRequest:
    start: Pose
    goal: Pose
    max_step: float = MAX_STEP
    max_angle_step: float = MAX_ANGLE_STEP
    obstacles: Optional[LabeledCloud] = None
    clearance: float = CLEARANCE
    rng_seed: int = 0
    max_iterations: int = MAX_ITERATIONS
    floor: Optional[float] = 0.0  # lowest z the search may sample

    def __post_init__(self):
        if not self.max_step > 0:
            raise ValueError("max_step must be > 0")
        if not self.max_angle_step > 0:
            raise ValueError("max_angle_step must be > 0")
        if self.clearance < 0:
            raise ValueError("clearance must be >= 0")

    def between(self, start: Pose, goal: Pose) -> "PlanRequest":
        return replace(self, start=start, goal=goal)

    @property
    def obstacle_points(self) -> np.ndarray:
        if self.obstacles is None:
            return np.zeros((0, 3))
        pts = self.obstacles.points if isinstance(self.obstacles, LabeledCloud) else self.obstacles
        return np.asarray(pts, dtype=np.float64).reshape(-1, 3)


def _steps(x, step):
    # ceil with a little slack so 1.0 / 0.1 stays 10
    return int(math.ceil(x / step - 1e-9)) if x > 0 else 0


def linear_plan(req: PlanRequest) -> np.ndarray:
    a, b = req.start.as_array(), req.goal.as_array()
    dist = float(np.linalg.norm(b[:3] - a[:3]))
    n = max(_steps(dist, req.max_step), _steps(quat_angle(a[3:], b[3:]), req.max_angle_step))
    if n == 0:
        return a[None].copy() if np.array_equal(a, b) else np.stack([a, b])
    return interpolate_arr(a, b, np.arange(n + 1) / n)


def collision_free(position, obstacles, clearance: float) -> bool:
    pts = obstacles.points if isinstance(obstacles, LabeledCloud) else np.asarray(obstacles).reshape(-1, 3)
    if len(pts) == 0:
        return True
    d = np.linalg.norm(np.asarray(pts, dtype=np.float64) - np.asarray(position, dtype=np.float64), axis=1)
    return bool(d.min() >= clearance)


class _Field:
    """Clearance checks for straight edges sampled every ``res`` metres.

    Samples must clear ``clearance + res / 2`` so the whole edge clears
    ``clearance``. Near the endpoints the bar drops to the endpoint's own
    distance when that is smaller, letting tight starts leave.
    """

    def __init__(self, tree, clearance, res, start, goal, d_start, d_goal):
        self.tree = tree
        self.res = res
        self.need = clearance + 0.5 * res
        self.start, self.goal = start, goal
        self.escape = 4 * res
        self.need_start = min(self.need, d_start)
        self.need_goal = min(self.need, d_goal)

    def ok(self, pts):
        pts = np.atleast_2d(pts)
        d, _ = self.tree.query(pts, distance_upper_bound=self.need)
        good = d >= self.need
        if good.all():
            return True
        near_s = np.linalg.norm(pts - self.start, axis=1) <= self.escape
        near_g = np.linalg.norm(pts - self.goal, axis=1) <= self.escape
        good |= near_s & (d >= self.need_start)
        good |= near_g & (d >= self.need_goal)
        return bool(good.all())

    def edge_ok(self, a, b):
        n = max(1, int(math.ceil(np.linalg.norm(b - a) / self.res)))
        ts = np.linspace(0.0, 1.0, n + 1)[:, None]
        return self.ok(a + ts * (b - a))


class _Tree:
    def __init__(self, root, capacity):
        self.nodes = np.empty((capacity, 3))
        self.parent = np.empty(capacity, dtype=np.int64)
        self.nodes[0] = root
        self.parent[0] = -1
        self.n = 1

    def add(self, p, parent):
        if self.n == len(self.nodes):
            self.nodes = np.concatenate([self.nodes, np.empty_like(self.nodes)])
            self.parent = np.concatenate([self.parent, np.empty_like(self.parent)])
        self.nodes[self.n] = p
        self.parent[self.n] = parent
        self.n += 1
        return self.n - 1

    def nearest(self, p):
        d = np.sum((self.nodes[:self.n] - p) ** 2, axis=1)
        return int(np.argmin(d))

    def path_to_root(self, i):
        out = []
        while i >= 0:
            out.append(self.nodes[i])
            i = self.parent[i]
        return out


def _steer(a, b, eta):
    d = np.linalg.norm(b - a)
    return b.copy() if d <= eta else a + (b - a) * (eta / d)


def _connect(tree, target, field, eta):
    """Grow ``tree`` toward ``target`` until blocked; index of the reaching node or None."""
    i = tree.nearest(target)
    while True:
        cur = tree.nodes[i]
        nxt = _steer(cur, target, eta)
        if not field.edge_ok(cur, nxt):
            return None
        i = tree.add(nxt, i)
        if np.array_equal(nxt, target):
            return i


def path_length(points) -> float:
    points = np.asarray(points)
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum()) if len(points) > 1 else 0.0


def shortcut(path, field, attempts, rng):
    path = [np.asarray(p) for p in path]
    for _ in range(attempts):
        if len(path) < 3:
            break
        i, j = sorted(rng.choice(len(path), size=2, replace=False))
        if j - i < 2:
            continue
        if field.edge_ok(path[i], path[j]):
            path = path[:i + 1] + path[j:]
    return np.array(path)


def rediscretize(polyline, start: Pose, goal: Pose, max_step, max_angle_step) -> np.ndarray:
    """Split every polyline edge evenly so positions never leave the polyline.

    Orientation slerps with arc length from ``start`` to ``goal``.
    """
    polyline = np.asarray(polyline, dtype=np.float64)
    seg = np.linalg.norm(np.diff(polyline, axis=0), axis=1)
    total = float(seg.sum())
    theta = float(quat_angle(start.quat, goal.quat))
    pos, arc = [polyline[:1]], [np.zeros(1)]
    cum = 0.0
    for i, length in enumerate(seg):
        if length == 0:
            continue
        share = theta * length / total
        n = max(_steps(length, max_step), _steps(share, max_angle_step), 1)
        ts = np.arange(1, n + 1) / n
        pos.append(polyline[i] + ts[:, None] * (polyline[i + 1] - polyline[i]))
        arc.append(cum + ts * length)
        cum += length
    pos, arc = np.concatenate(pos), np.concatenate(arc)
    if total == 0:
        n = max(_steps(theta, max_angle_step), 1)
        pos = np.repeat(polyline[:1], n + 1, axis=0)
        frac = np.arange(n + 1) / n
    else:
        frac = arc / total
    out = np.empty((len(pos), 7))
    out[:, :3] = pos
    out[:, 3:] = quat_slerp(np.broadcast_to(start.quat, (len(pos), 4)),
                            np.broadcast_to(goal.quat, (len(pos), 4)), frac)
    out[0], out[-1] = start.as_array(), goal.as_array()
    return out


def rrt_plan(req: PlanRequest, shortcut_attempts: int = SHORTCUTS) -> np.ndarray:
    """RRT-Connect in position space; reduces to ``linear_plan`` when the straight line is clear."""
    obstacles = req.obstacle_points
    if len(obstacles) == 0:
        return linear_plan(req)
    start, goal = req.start.position.copy(), req.goal.position.copy()
    tree = cKDTree(obstacles)
    dist = {}
    for name, p in (("start", start), ("goal", goal)):
        dist[name], _ = tree.query(p)
        if dist[name] < req.clearance:
            raise StartOrGoalInCollision(
                f"{name} is {dist[name]:.4f} m from an obstacle, clearance {req.clearance}")
    field = _Field(tree, req.clearance, EDGE_RES, start, goal, dist["start"], dist["goal"])
    if field.edge_ok(start, goal):
        return linear_plan(req)

    rng = np.random.default_rng(req.rng_seed)
    lo = np.minimum(np.minimum(start, goal), obstacles.min(axis=0)) - 0.15
    hi = np.maximum(np.maximum(start, goal), obstacles.max(axis=0)) + 0.15
    if req.floor is not None:
        lo[2] = max(lo[2], min(req.floor, start[2], goal[2]))
    eta = max(5 * req.max_step, 0.03)
    ta, tb = _Tree(start, 1024), _Tree(goal, 1024)
    found = None
    for _ in range(req.max_iterations):
        q = rng.uniform(lo, hi)
        i = ta.nearest(q)
        new = _steer(ta.nodes[i], q, eta)
        if field.ok(new) and field.edge_ok(ta.nodes[i], new):
            j = ta.add(new, i)
            k = _connect(tb, new, field, eta)
            if k is not None:
                found = (ta, j, tb, k)
                break
        ta, tb = tb, ta
    if found is None:
        raise PlanningFailed(f"no path after {req.max_iterations} iterations")
    a, j, b, k = found
    half_a, half_b = a.path_to_root(j)[::-1], b.path_to_root(k)
    path = half_a + half_b[1:]
    if not np.array_equal(path[0], start):
        path = path[::-1]
    path = shortcut(path, field, shortcut_attempts, rng)
    return rediscretize(path, req.start, req.goal, req.max_step, req.max_angle_step)


def plan(req: PlanRequest) -> np.ndarray:
    """Dispatch on the presence of obstacles."""
    return rrt_plan(req) if len(req.obstacle_points) else linear_plan(req)


def as_poses(path) -> list:
    return [Pose.from_array(p) for p in np.asarray(path)]
