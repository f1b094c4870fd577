"""Primitive solids: surface sampling, analytic ray hits, and 2D polygon helpers.

Local frames: boxes, spheres and cylinders are centred on the origin with
the cylinder axis along z; a cone has its base disk at z = 0 and apex at
z = height.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .pointcloud import OBSTACLE, LabeledCloud
from .se3 import Pose

RAY_EPS = 1e-6


def largest_remainder(weights, n):
    """Integer split of ``n`` proportional to ``weights`` (ties to the lower index)."""
    w = np.asarray(weights, dtype=np.float64)
    quota = n * w / w.sum()
    counts = np.floor(quota).astype(int)
    rest = n - counts.sum()
    order = np.argsort(-(quota - counts), kind="stable")
    counts[order[:rest]] += 1
    return counts


def _disk(rng, n, r):
    rho = r * np.sqrt(rng.random(n))
    phi = rng.random(n) * 2 * math.pi
    return rho * np.cos(phi), rho * np.sin(phi)


@dataclass(frozen=True)
class Primitive:
    shape: str
    size: tuple  # box (sx, sy, sz); sphere (r,); cylinder / cone (r, h)
    pose: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        size = tuple(float(v) for v in np.atleast_1d(self.size))
        need = {"box": 3, "sphere": 1, "cylinder": 2, "cone": 2}
        if self.shape not in need:
            raise ValueError(f"unknown primitive {self.shape!r}")
        if len(size) != need[self.shape] or min(size) <= 0:
            raise ValueError(f"{self.shape} needs {need[self.shape]} positive size values, got {size}")
        object.__setattr__(self, "size", size)

    # -- geometry in the local frame --------------------------------------------

    def face_areas(self):
        s = self.size
        if self.shape == "box":
            x, y, z = s
            return np.array([y * z, y * z, x * z, x * z, x * y, x * y])
        if self.shape == "sphere":
            return np.array([4 * math.pi * s[0] ** 2])
        r, h = s
        if self.shape == "cylinder":
            return np.array([2 * math.pi * r * h, math.pi * r * r, math.pi * r * r])
        return np.array([math.pi * r * math.hypot(r, h), math.pi * r * r])

    @property
    def area(self):
        return float(self.face_areas().sum())

    def sample_local(self, n, rng) -> np.ndarray:
        """Uniform surface samples, stratified over faces by area."""
        counts = largest_remainder(self.face_areas(), n)
        parts = [self._face(i, c, rng) for i, c in enumerate(counts) if c]
        return np.concatenate(parts) if parts else np.zeros((0, 3))

    def _face(self, i, n, rng):
        s = self.size
        if self.shape == "box":
            half = np.asarray(s) / 2
            axis, sign = i // 2, (1.0 if i % 2 == 0 else -1.0)
            p = (rng.random((n, 3)) * 2 - 1) * half
            p[:, axis] = sign * half[axis]
            return p
        if self.shape == "sphere":
            v = rng.normal(size=(n, 3))
            return s[0] * v / np.linalg.norm(v, axis=1, keepdims=True)
        r, h = s
        if self.shape == "cylinder":
            if i == 0:
                phi = rng.random(n) * 2 * math.pi
                return np.stack([r * np.cos(phi), r * np.sin(phi), (rng.random(n) - 0.5) * h], axis=1)
            x, y = _disk(rng, n, r)
            return np.stack([x, y, np.full(n, h / 2 if i == 1 else -h / 2)], axis=1)
        if i == 0:
            # lateral area below a point grows with the square of its distance from the apex
            frac = np.sqrt(rng.random(n))
            phi = rng.random(n) * 2 * math.pi
            return np.stack([frac * r * np.cos(phi), frac * r * np.sin(phi), h * (1 - frac)], axis=1)
        x, y = _disk(rng, n, r)
        return np.stack([x, y, np.zeros(n)], axis=1)

    def surface_distance_local(self, p) -> np.ndarray:
        """Distance from local points to the primitive surface (exact for points near it)."""
        p = np.atleast_2d(p)
        s = self.size
        if self.shape == "box":
            half = np.asarray(s) / 2
            q = np.abs(p) - half
            outside = np.linalg.norm(np.maximum(q, 0), axis=1)
            inside = np.minimum(q.max(axis=1), 0)
            return np.abs(outside + inside)
        if self.shape == "sphere":
            return np.abs(np.linalg.norm(p, axis=1) - s[0])
        r, h = s
        rho = np.hypot(p[:, 0], p[:, 1])
        if self.shape == "cylinder":
            dr, dz = rho - r, np.abs(p[:, 2]) - h / 2
            outside = np.hypot(np.maximum(dr, 0), np.maximum(dz, 0))
            return np.abs(outside + np.minimum(np.maximum(dr, dz), 0))
        # cone: 2D distance in the (rho, z) half-plane to the triangle boundary
        q = np.stack([rho, p[:, 2]], axis=1)
        edges = [((0.0, 0.0), (r, 0.0)), ((r, 0.0), (0.0, h))]
        best = np.full(len(p), np.inf)
        for a, b in edges:
            a, b = np.asarray(a), np.asarray(b)
            ab = b - a
            t = np.clip(((q - a) @ ab) / (ab @ ab), 0, 1)
            best = np.minimum(best, np.linalg.norm(q - (a + t[:, None] * ab), axis=1))
        return best

    # -- world frame ---------------------------------------------------------------

    def sample(self, n, rng) -> np.ndarray:
        return self.pose.apply(self.sample_local(n, rng))

    def surface_distance(self, points) -> np.ndarray:
        return self.surface_distance_local(self.pose.inverse().apply(np.atleast_2d(points)))

    def ray_hits(self, origins, dirs, tmax) -> np.ndarray:
        """True where the ray ``o + t d`` meets the solid for some ``t`` in (RAY_EPS, tmax).

        ``dirs`` must be unit length; ``tmax`` may be per-ray.
        """
        inv = self.pose.inverse()
        o = inv.apply(np.atleast_2d(origins))
        R = inv.as_matrix()[:3, :3]
        d = np.atleast_2d(dirs) @ R.T
        tmax = np.broadcast_to(np.asarray(tmax, dtype=np.float64), (len(o),))
        lo, hi = getattr(self, "_interval_" + self.shape)(o, d)
        lo = np.maximum(lo, RAY_EPS)
        return (hi > lo) & (hi > RAY_EPS) & (lo < tmax)

    # ray/solid intersection intervals [lo, hi] (empty when hi <= lo)

    def _interval_box(self, o, d):
        half = np.asarray(self.size) / 2
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (-half - o) * inv
            t2 = (half - o) * inv
        par = d == 0
        inside = np.abs(o) <= half
        lo = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        hi = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        return lo.max(axis=1), hi.min(axis=1)

    def _interval_sphere(self, o, d):
        r = self.size[0]
        b = np.sum(o * d, axis=1)
        c = np.sum(o * o, axis=1) - r * r
        disc = b * b - c
        sq = np.sqrt(np.maximum(disc, 0))
        lo, hi = -b - sq, -b + sq
        miss = disc <= 0
        return np.where(miss, np.inf, lo), np.where(miss, -np.inf, hi)

    def _quadric(self, a, b, c):
        with np.errstate(divide="ignore", invalid="ignore"):
            disc = b * b - 4 * a * c
            sq = np.sqrt(np.maximum(disc, 0))
            r1 = (-b - sq) / (2 * a)
            r2 = (-b + sq) / (2 * a)
        return np.minimum(r1, r2), np.maximum(r1, r2), disc

    def _slab_z(self, o, d, z0, z1):
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (z0 - o[:, 2]) / d[:, 2]
            t2 = (z1 - o[:, 2]) / d[:, 2]
        par = d[:, 2] == 0
        inside = (o[:, 2] >= z0) & (o[:, 2] <= z1)
        lo = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        hi = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        return lo, hi

    def _interval_cylinder(self, o, d):
        r, h = self.size
        a = d[:, 0] ** 2 + d[:, 1] ** 2
        b = 2 * (o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1])
        c = o[:, 0] ** 2 + o[:, 1] ** 2 - r * r
        lo, hi, disc = self._quadric(a, b, c)
        axial = a < 1e-15
        lo = np.where(axial, np.where(c <= 0, -np.inf, np.inf), np.where(disc > 0, lo, np.inf))
        hi = np.where(axial, np.where(c <= 0, np.inf, -np.inf), np.where(disc > 0, hi, -np.inf))
        zlo, zhi = self._slab_z(o, d, -h / 2, h / 2)
        return np.maximum(lo, zlo), np.minimum(hi, zhi)

    def _interval_cone(self, o, d):
        # solid cone = {q(t) <= 0} on the slab 0 <= z <= h, where q is the
        # double-cone quadric; it is convex, so at most one piece survives
        r, h = self.size
        k2 = (r / h) ** 2
        w = h - o[:, 2]
        a = d[:, 0] ** 2 + d[:, 1] ** 2 - k2 * d[:, 2] ** 2
        b = 2 * (o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1] + k2 * w * d[:, 2])
        c = o[:, 0] ** 2 + o[:, 1] ** 2 - k2 * w * w
        r1, r2, disc = self._quadric(a, b, c)
        zlo, zhi = self._slab_z(o, d, 0.0, h)
        hit = disc > 0
        lo = np.where(hit, r1, np.inf)
        hi = np.where(hit, r2, -np.inf)
        # a < 0: interior lies outside the roots
        lo_a, hi_a = np.maximum(zlo, -np.inf), np.minimum(zhi, np.where(hit, r1, np.inf))
        lo_b, hi_b = np.maximum(zlo, np.where(hit, r2, -np.inf)), zhi
        take_a = (hi_a - lo_a) >= (hi_b - lo_b)
        neg = a < 0
        lo = np.where(neg, np.where(take_a, lo_a, lo_b), np.maximum(lo, zlo))
        hi = np.where(neg, np.where(take_a, hi_a, hi_b), np.minimum(hi, zhi))
        flat = np.abs(a) < 1e-15
        with np.errstate(divide="ignore", invalid="ignore"):
            root = -c / b
        # linear case: q = b t + c <= 0
        lo_f = np.where(b > 0, -np.inf, np.where(b < 0, root, np.where(c <= 0, -np.inf, np.inf)))
        hi_f = np.where(b > 0, root, np.where(b < 0, np.inf, np.where(c <= 0, np.inf, -np.inf)))
        lo = np.where(flat, np.maximum(lo_f, zlo), lo)
        hi = np.where(flat, np.minimum(hi_f, zhi), hi)
        return lo, hi

    def to_json(self):
        return {"shape": self.shape, "size": list(self.size), "pose": self.pose.as_array().tolist()}

    @classmethod
    def from_json(cls, d):
        """Accepts ``pose`` (7 numbers) or ``center`` [+ ``yaw`` degrees]."""
        if "pose" in d:
            pose = Pose.from_array(d["pose"])
        else:
            pose = Pose.from_yaw(math.radians(float(d.get("yaw", 0.0))), d.get("center", (0, 0, 0)))
        return cls(d["shape"], tuple(d["size"]), pose)


def sample_primitive(primitive: Primitive, n: int, seed: int = 0) -> LabeledCloud:
    """Deterministic stratified surface samples labelled as obstacle points."""
    if n < 1:
        raise ValueError("n must be >= 1")
    pts = primitive.sample(n, np.random.default_rng(seed))
    return LabeledCloud(pts, np.full(n, OBSTACLE))


# -- planar polygons -------------------------------------------------------------

def point_in_polygon(points, polygon) -> np.ndarray:
    """Even-odd ray casting; boundary points count as inside."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))[:, :2]
    poly = np.asarray(polygon, dtype=np.float64)
    x, y = pts[:, 0:1], pts[:, 1:2]
    x1, y1 = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    crosses = (y1 > y) != (y2 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
    inside = (np.sum(crosses & (x < xint), axis=1) % 2) == 1
    # boundary: distance to some edge ~ 0
    ex, ey = x2 - x1, y2 - y1
    L2 = ex * ex + ey * ey
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.clip(((x - x1) * ex + (y - y1) * ey) / np.where(L2 == 0, 1, L2), 0, 1)
    d = np.hypot(x - (x1 + t * ex), y - (y1 + t * ey)).min(axis=1)
    return inside | (d <= 1e-12)


def polygon_centroid(polygon) -> np.ndarray:
    p = np.asarray(polygon, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = cross.sum() / 2
    if abs(a) < 1e-15:
        return p.mean(axis=0)
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6 * a)


def rectangle(xmin, xmax, ymin, ymax):
    return [(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)]


def disk_polygon(center, radius, n=64) -> list:
    a = 2 * math.pi * np.arange(n) / n
    return [(center[0] + radius * math.cos(t), center[1] + radius * math.sin(t)) for t in a]


def clip_polygon(subject: Sequence, clip: Sequence) -> list:
    """Sutherland-Hodgman clip of ``subject`` against convex ``clip`` (both CCW)."""
    out = [tuple(p) for p in subject]
    c = [tuple(p) for p in clip]
    for i in range(len(c)):
        a, b = c[i], c[(i + 1) % len(c)]
        inp, out = out, []
        if not inp:
            break

        def side(p):
            return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])

        for j in range(len(inp)):
            p, q = inp[j], inp[(j + 1) % len(inp)]
            sp, sq = side(p), side(q)
            if sp >= 0:
                out.append(p)
            if (sp >= 0) != (sq >= 0):
                t = sp / (sp - sq)
                out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out
