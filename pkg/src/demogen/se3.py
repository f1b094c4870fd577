"""
Rigid transforms in SE(3).

Poses are position + unit quaternion (w, x, y, z). The array form used for
trajectories is the 7-vector (px, py, pz, qw, qx, qy, qz); functions suffixed
``_arr`` broadcast over leading dimensions.

Convention: every pose maps local coordinates into the world frame, and
``compose(a, b)`` equals the 4x4 product ``T_a @ T_b``. A configuration change
is the world-frame delta ``delta_between(src, tgt) = tgt * src^-1`` and it is
applied by left multiplication, ``compose(delta, x)``. Under this convention a
pose rigidly attached to an object keeps its object-frame coordinates when
the object moves by the delta.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


# --- quaternion kernels -----------------------------------------------------

def quat_mul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conj(q):
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_rotate(q, v):
    """Rotate vectors ``v`` (..., 3) by unit quaternions ``q`` (..., 4)."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    w = q[..., :1]
    u = q[..., 1:]
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def quat_canonical(q):
    """Flip sign so that w >= 0 (ties at w == 0 broken by the first non-zero xyz)."""
    q = np.array(q, dtype=np.float64, copy=True)
    flat = q.reshape(-1, 4)
    w, x, y, z = flat.T
    neg = (w < 0.0) | ((w == 0.0) & ((x < 0.0) | ((x == 0.0) & ((y < 0.0) | ((y == 0.0) & (z < 0.0))))))
    flat[neg] *= -1.0
    return flat.reshape(q.shape)


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_matrix(q):
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def matrix_to_quat(m):
    """Shepperd's method for a single 3x3 rotation matrix."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_canonical(quat_normalize(np.array(q)))


def quat_angle(a, b):
    """Rotation angle (radians) taking orientation ``a`` to ``b``."""
    r = quat_mul(quat_conj(a), b)
    # atan2 keeps precision near zero where arccos of the dot product does not
    return 2.0 * np.arctan2(np.linalg.norm(r[..., 1:], axis=-1), np.abs(r[..., 0]))


def quat_slerp(a, b, t):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    dot = np.sum(a * b, axis=-1)
    b = np.where((dot < 0.0)[..., None], -b, b)
    dot = np.abs(dot)
    t_ = t[..., None]
    theta = np.arccos(np.clip(dot, -1.0, 1.0))[..., None]
    sin_theta = np.sin(theta)
    small = sin_theta < 1e-9
    safe = np.where(small, 1.0, sin_theta)
    wa = np.where(small, 1.0 - t_, np.sin((1.0 - t_) * theta) / safe)
    wb = np.where(small, t_, np.sin(t_ * theta) / safe)
    return quat_canonical(quat_normalize(wa * a + wb * b))


# --- pose arrays (..., 7) -----------------------------------------------------

def compose_arr(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    pos = a[..., :3] + quat_rotate(a[..., 3:], b[..., :3])
    quat = quat_canonical(quat_normalize(quat_mul(a[..., 3:], b[..., 3:])))
    return np.concatenate([pos, quat], axis=-1)


def inverse_arr(a):
    a = np.asarray(a, dtype=np.float64)
    qi = quat_conj(a[..., 3:])
    pos = -quat_rotate(qi, a[..., :3])
    return np.concatenate([pos, quat_canonical(qi)], axis=-1)


def matrices_arr(a):
    """(..., 7) poses to (..., 4, 4) homogeneous matrices."""
    a = np.asarray(a, dtype=np.float64)
    m = np.zeros(a.shape[:-1] + (4, 4))
    m[..., :3, :3] = quat_to_matrix(a[..., 3:])
    m[..., :3, 3] = a[..., :3]
    m[..., 3, 3] = 1.0
    return m


def is_identity_arr(a):
    """Exact identity test per pose; used to keep zero edits bit-exact."""
    a = np.asarray(a, dtype=np.float64)
    return np.all(a[..., :3] == 0.0, axis=-1) & (a[..., 3] == 1.0) & np.all(a[..., 4:] == 0.0, axis=-1)


# --- Pose ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Pose:
    position: np.ndarray
    quat: np.ndarray

    def __post_init__(self):
        p = np.array(self.position, dtype=np.float64).reshape(3)
        q = np.array(self.quat, dtype=np.float64).reshape(4)
        p.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "quat", q)

    # construction
    @classmethod
    def identity(cls):
        return cls(np.zeros(3), IDENTITY_QUAT)

    @classmethod
    def from_translation(cls, x, y=0.0, z=0.0):
        if np.ndim(x):
            x, y, z = x
        return cls([x, y, z], IDENTITY_QUAT)

    @classmethod
    def from_yaw(cls, yaw, position=(0.0, 0.0, 0.0)):
        """Rotation of ``yaw`` radians about world z."""
        h = 0.5 * yaw
        return cls(position, quat_canonical([math.cos(h), 0.0, 0.0, math.sin(h)]))

    @classmethod
    def from_axis_angle(cls, axis, angle, position=(0.0, 0.0, 0.0)):
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        h = 0.5 * angle
        return cls(position, quat_canonical(np.concatenate([[math.cos(h)], math.sin(h) * axis])))

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=np.float64)
        return cls(a[:3], a[3:7])

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, 3], matrix_to_quat(m[:3, :3]))

    # conversion
    def as_array(self):
        return np.concatenate([self.position, self.quat])

    def as_matrix(self):
        return matrices_arr(self.as_array())

    def to_bytes(self):
        """7 little-endian float64 values (px, py, pz, qw, qx, qy, qz)."""
        return struct.pack("<7d", *self.as_array())

    @classmethod
    def from_bytes(cls, buf):
        return cls.from_array(struct.unpack("<7d", buf))

    # algebra
    def __matmul__(self, other):
        return compose(self, other)

    def inverse(self):
        return inverse(self)

    def apply(self, points):
        """Map (N, 3) local points into the world frame."""
        pts = np.asarray(points, dtype=np.float64)
        if self.is_identity():
            return pts.copy()
        return quat_rotate(self.quat, pts) + self.position

    def is_identity(self):
        return bool(is_identity_arr(self.as_array()))

    @property
    def angle(self):
        return float(quat_angle(self.quat, IDENTITY_QUAT))

    @property
    def yaw(self):
        w, x, y, z = self.quat
        return math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))

    def allclose(self, other, atol=1e-9):
        return (np.allclose(self.position, other.position, atol=atol, rtol=0.0)
                and abs(float(np.dot(self.quat, other.quat))) >= 1.0 - atol)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.position, other.position) and np.array_equal(self.quat, other.quat)

    def __hash__(self):
        return hash(self.to_bytes())

    def __repr__(self):
        p = ", ".join(f"{v:.4g}" for v in self.position)
        q = ", ".join(f"{v:.4g}" for v in self.quat)
        return f"Pose(pos=[{p}], quat=[{q}])"


def compose(a: Pose, b: Pose) -> Pose:
    if a.is_identity():
        return b
    if b.is_identity():
        return a
    return Pose.from_array(compose_arr(a.as_array(), b.as_array()))


def inverse(a: Pose) -> Pose:
    if a.is_identity():
        return a
    return Pose.from_array(inverse_arr(a.as_array()))


def delta_between(source: Pose, target: Pose) -> Pose:
    """World-frame delta D with ``compose(D, source) == target``."""
    if source == target:
        return Pose.identity()
    return compose(target, inverse(source))


def interpolate(a: Pose, b: Pose, t: float) -> Pose:
    """Linear position, shortest-arc slerp orientation; endpoints are returned exactly."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"interpolation fraction {t} outside [0, 1]")
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    pos = (1.0 - t) * a.position + t * b.position
    return Pose(pos, quat_slerp(a.quat, b.quat, t))


def interpolate_arr(a, b, ts):
    """Vectorised ``interpolate`` for many fractions; returns (len(ts), 7)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ts = np.asarray(ts, dtype=np.float64)
    pos = (1.0 - ts)[:, None] * a[:3] + ts[:, None] * b[:3]
    quat = quat_slerp(np.broadcast_to(a[3:], (len(ts), 4)), np.broadcast_to(b[3:], (len(ts), 4)), ts)
    out = np.concatenate([pos, quat], axis=1)
    out[ts == 0.0] = a
    out[ts == 1.0] = b
    return out


def angle_between(a: Pose, b: Pose) -> float:
    return float(quat_angle(a.quat, b.quat))
