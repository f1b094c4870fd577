"""Split a source trajectory into alternating motion and skill segments."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import NoContactDetected, NonSequentialContact, NoSuchObject
from .pointcloud import LabeledCloud
from .se3 import Pose, quat_rotate
from .segments import MOTION, SKILL, Segment, SegmentIndex

CONTACT_THRESHOLD = 0.10
HYSTERESIS = 3


def object_center(cloud: LabeledCloud, object_id: int) -> np.ndarray:
    mask = cloud.labels == object_id
    if not mask.any():
        raise NoSuchObject(f"object {object_id} has no labeled points")
    return cloud.points[mask].astype(np.float64).mean(axis=0)


def in_contact(ee_pose: Pose, center, threshold: float) -> bool:
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return bool(np.linalg.norm(ee_pose.position - np.asarray(center, dtype=np.float64)) <= threshold)


def smooth_contact(raw, hysteresis: int = HYSTERESIS) -> np.ndarray:
    """Debounce a boolean contact trace.

    The state starts out of contact and only toggles when the opposite raw
    value persists for ``hysteresis`` consecutive frames; the toggle is
    placed at the start of that run.
    """
    raw = np.asarray(raw, dtype=bool)
    out = np.zeros_like(raw)
    state = False
    t = 0
    n = len(raw)
    while t < n:
        end = t
        while end < n and raw[end] == raw[t]:
            end += 1
        if raw[t] != state and end - t >= hysteresis:
            state = bool(raw[t])
        out[t:end] = state
        t = end
    return out


def ee_points(arm_poses, tool_offset=None) -> np.ndarray:
    """End-effector reference positions, optionally shifted by a tool-tip offset in the ee frame."""
    arm_poses = np.asarray(arm_poses, dtype=np.float64)
    if tool_offset is None:
        return arm_poses[:, :3]
    return arm_poses[:, :3] + quat_rotate(arm_poses[:, 3:], np.asarray(tool_offset, dtype=np.float64))


def contact_trace(demo, arm, object_id, threshold=CONTACT_THRESHOLD, hysteresis=HYSTERESIS, tool_offset=None):
    center = object_center(LabeledCloud(demo.points[0], demo.labels), object_id)
    d = np.linalg.norm(ee_points(demo.arm_action[:, arm], tool_offset) - center, axis=1)
    return smooth_contact(d <= threshold, hysteresis)


def _first_true(mask, start):
    idx = np.flatnonzero(mask[start:])
    return None if idx.size == 0 else int(idx[0]) + start


def parse_arm(contacts: Sequence[np.ndarray], object_ids: Sequence[int], length: int):
    """Segments for one arm given smoothed contact traces in task order."""
    segments = []
    cursor = 0
    for i, (obj, c) in enumerate(zip(object_ids, contacts)):
        s = _first_true(c, cursor)
        if s is None:
            if c.any():
                raise NonSequentialContact(f"object {obj} is only contacted before the previous skill ends")
            raise NoContactDetected(f"end-effector never comes within threshold of object {obj}")
        for later_obj, later in zip(object_ids[i + 1:], contacts[i + 1:]):
            first = _first_true(later, cursor)
            if first is not None and first < s and not later[s]:
                raise NonSequentialContact(f"object {later_obj} contacted before object {obj}")
        if i + 1 == len(object_ids):
            e = length - 1
        else:
            run_end = _first_true(~c, s)
            e = length - 1 if run_end is None else run_end - 1
            nxt = _first_true(contacts[i + 1], s + 1)
            if nxt is not None and nxt <= e:
                e = nxt - 1
        segments.append(Segment(MOTION, obj, cursor, s - 1))
        segments.append(Segment(SKILL, obj, s, e))
        cursor = e + 1
    return segments


def parse(demo, threshold: float = CONTACT_THRESHOLD, hysteresis: int = HYSTERESIS,
          tool_offset: Optional[Sequence[float]] = None) -> SegmentIndex:
    """Per object in task order, the first contact run is its skill segment; gaps are motions.

    Contact is measured between the commanded end-effector position and the
    centroid of the object's frame-0 points. Frames after the last skill's
    contact run stay attached to that skill so the segments tile the
    trajectory.
    """
    if demo.K < 1:
        raise NoContactDetected("demonstration has no objects")
    arms = []
    for arm in range(demo.arms):
        objs = list(demo.arm_object_map[arm])
        if not objs:
            arms.append((Segment(MOTION, -1, 0, -1), Segment(SKILL, -1, 0, demo.L - 1)))
            continue
        contacts = [contact_trace(demo, arm, k, threshold, hysteresis, tool_offset) for k in objs]
        arms.append(tuple(parse_arm(contacts, objs, demo.L)))
    return SegmentIndex(tuple(arms))
