"""
Labeled point clouds and the preprocessing / editing primitives applied to them.

Label convention: ``0..K-1`` object ids, ``EE`` (-1) end-effector or
unassigned, ``BACKGROUND`` (-2) table and clutter, ``OBSTACLE`` (-3) fused
obstacle geometry.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, MissingDelta
from .se3 import Pose

EE = -1
BACKGROUND = -2
OBSTACLE = -3

DBSCAN_EPS = 0.02
DBSCAN_MIN_PTS = 5
PROXIMITY_RADIUS = 0.005


@dataclass
class LabeledCloud:
    points: np.ndarray
    labels: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float32).reshape(-1, 3)
        self.labels = np.asarray(self.labels, dtype=np.int32).reshape(-1)
        if len(self.labels) != len(self.points):
            raise ValueError(f"{len(self.labels)} labels for {len(self.points)} points")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float32).reshape(-1, 3)
            if len(self.colors) != len(self.points):
                raise ValueError("colors length differs from points length")

    def __len__(self):
        return len(self.points)

    def subset(self, index):
        colors = None if self.colors is None else self.colors[index]
        return LabeledCloud(self.points[index], self.labels[index], colors)

    def of_label(self, label):
        return self.subset(self.labels == label)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros(0))

    @classmethod
    def concat(cls, clouds):
        clouds = list(clouds)
        if not clouds:
            return cls.empty()
        colors = None
        if all(c.colors is not None for c in clouds):
            colors = np.concatenate([c.colors for c in clouds])
        return cls(np.concatenate([c.points for c in clouds]),
                   np.concatenate([c.labels for c in clouds]), colors)


@dataclass(frozen=True)
class CropBox:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3 or not all(a < b for a, b in zip(lo, hi)):
            raise ValueError(f"invalid crop box {lo} .. {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, points):
        p = np.asarray(points)
        return np.all((p >= np.asarray(self.lo, dtype=p.dtype)) & (p <= np.asarray(self.hi, dtype=p.dtype)), axis=1)


def crop(cloud: LabeledCloud, box: CropBox) -> LabeledCloud:
    out = cloud.subset(box.contains(cloud.points))
    if len(out) == 0:
        raise EmptyCloud("no points inside crop box")
    return out


def dbscan(points, eps, min_pts):
    """Cluster ids per point, ``-1`` for noise. ``min_pts`` counts the point itself."""
    if eps <= 0 or min_pts < 1:
        raise ValueError("eps must be > 0 and min_pts >= 1")
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    neighbours = cKDTree(pts).query_ball_point(pts, eps)
    core = np.fromiter((len(nb) >= min_pts for nb in neighbours), dtype=bool, count=n)
    cluster = 0
    for seed in range(n):
        if not core[seed] or labels[seed] != -1:
            continue
        labels[seed] = cluster
        stack = [seed]
        while stack:
            i = stack.pop()
            for j in neighbours[i]:
                if labels[j] == -1:
                    labels[j] = cluster
                    if core[j]:
                        stack.append(j)
        cluster += 1
    return labels


def cluster_filter(cloud: LabeledCloud, eps: float = DBSCAN_EPS, min_pts: int = DBSCAN_MIN_PTS) -> LabeledCloud:
    """Drop DBSCAN noise points."""
    keep = dbscan(cloud.points, eps, min_pts) >= 0
    if not keep.any():
        raise EmptyCloud("every point is DBSCAN noise")
    return cloud.subset(keep)


def fps_indices(points, k, seed_index=0):
    """Greedy farthest point sampling; ties go to the lowest index.

    For ``k > N`` the selected order is repeated cyclically.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n == 0:
        raise EmptyCloud("cannot sample from an empty cloud")
    m = min(k, n)
    order = np.empty(m, dtype=np.int64)
    order[0] = seed_index
    d = np.sum((pts - pts[seed_index]) ** 2, axis=1)
    for i in range(1, m):
        j = int(np.argmax(d))
        order[i] = j
        d = np.minimum(d, np.sum((pts - pts[j]) ** 2, axis=1))
    if k > n:
        order = order[np.arange(k) % n]
    return order


def farthest_point_sample(cloud: LabeledCloud, k: int, seed_index: int = 0) -> LabeledCloud:
    return cloud.subset(fps_indices(cloud.points, k, seed_index))


def transform_labeled(cloud: LabeledCloud, deltas: Mapping[int, Pose], ee_delta: Pose) -> LabeledCloud:
    """Move each point rigidly by the delta of its label.

    Objects use ``deltas[label]``, end-effector points use ``ee_delta``;
    background and obstacle points stay put. Identity deltas leave the
    float32 payload untouched.
    """
    out = cloud.points.copy()
    for label in np.unique(cloud.labels):
        if label >= 0:
            if int(label) not in deltas:
                raise MissingDelta(f"no delta for object {label}")
            delta = deltas[int(label)]
        elif label == EE:
            delta = ee_delta
        else:
            continue
        if delta.is_identity():
            continue
        mask = cloud.labels == label
        out[mask] = delta.apply(cloud.points[mask].astype(np.float64)).astype(np.float32)
    return LabeledCloud(out, cloud.labels.copy(), None if cloud.colors is None else cloud.colors.copy())


def chamfer(a, b) -> float:
    """Mean of the two directed mean nearest-neighbour distances."""
    pa = a.points if isinstance(a, LabeledCloud) else np.asarray(a)
    pb = b.points if isinstance(b, LabeledCloud) else np.asarray(b)
    if len(pa) == 0 or len(pb) == 0:
        raise EmptyCloud("chamfer needs two non-empty clouds")
    pa = np.asarray(pa, dtype=np.float64)
    pb = np.asarray(pb, dtype=np.float64)
    dab, _ = cKDTree(pb).query(pa)
    dba, _ = cKDTree(pa).query(pb)
    return 0.5 * (float(dab.mean()) + float(dba.mean()))


def proximity_mask(points, reference, radius):
    """True where a point lies within ``radius`` of any reference point."""
    points = np.asarray(points, dtype=np.float64)
    if len(reference) == 0 or len(points) == 0:
        return np.zeros(len(points), dtype=bool)
    d, _ = cKDTree(np.asarray(reference, dtype=np.float64)).query(points, distance_upper_bound=radius)
    return d <= radius


def subtract_by_proximity(scene: LabeledCloud, reference: LabeledCloud, radius: float = PROXIMITY_RADIUS) -> LabeledCloud:
    if radius <= 0:
        raise ValueError("radius must be positive")
    return scene.subset(~proximity_mask(scene.points, reference.points, radius))


def pad_cyclic(cloud: LabeledCloud, n: int) -> LabeledCloud:
    if len(cloud) == 0:
        raise EmptyCloud("cannot pad an empty cloud")
    if len(cloud) >= n:
        return cloud
    return cloud.subset(np.arange(n) % len(cloud))


def preprocess(cloud: LabeledCloud, box: Optional[CropBox], n_points: int,
               eps: float = DBSCAN_EPS, min_pts: int = DBSCAN_MIN_PTS, cluster: bool = True) -> LabeledCloud:
    """Crop, drop background, DBSCAN-filter and downsample to exactly ``n_points``."""
    out = cloud.subset(cloud.labels != BACKGROUND)
    if box is not None:
        out = crop(out, box)
    if len(out) == 0:
        raise EmptyCloud("nothing left after removing background")
    if cluster:
        out = cluster_filter(out, eps, min_pts)
    if len(out) > n_points:
        return farthest_point_sample(out, n_points)
    return pad_cyclic(out, n_points)


def mean_spacing(points) -> float:
    """Mean nearest-neighbour distance inside one cloud (sampling resolution)."""
    pts = np.asarray(points, dtype=np.float64)
    d, _ = cKDTree(pts).query(pts, k=2)
    return float(d[:, 1].mean())


def write_ply(cloud: LabeledCloud, path) -> None:
    """ASCII PLY with xyz and an integer label property, for debugging."""
    with open(path, "w", encoding="ascii") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(cloud)}\n")
        f.write("property float x\nproperty float y\nproperty float z\nproperty int label\nend_header\n")
        for (x, y, z), lab in zip(cloud.points.tolist(), cloud.labels.tolist()):
            f.write(f"{x!r} {y!r} {z!r} {lab}\n")


def read_ply(path) -> LabeledCloud:
    with open(path, encoding="ascii") as f:
        lines = f.read().splitlines()
    end = lines.index("end_header")
    rows = [ln.split() for ln in lines[end + 1:] if ln.strip()]
    if not rows:
        return LabeledCloud.empty()
    arr = np.array(rows)
    return LabeledCloud(arr[:, :3].astype(np.float32), arr[:, 3].astype(np.int32))
