"""Synthetic observations by editing source point clouds.

Every source point is assigned, once per source, to a rigid group: one
group per arm (end-effector plus whatever it carries), one per object
while the object rests, and a fixed group for obstacles. A synthesized
frame moves each group of its matched source frame by that group's
transform; with two arms, each arm's own groups come from that arm's
matched frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .adapter import ActionPlan
from .demo_store import Demonstration, Frame, check
from .errors import DegenerateSplit, MissingDelta
from .parser import parse
from .pointcloud import EE, OBSTACLE, LabeledCloud, proximity_mask
from .se3 import (Pose, compose, compose_arr, delta_between, inverse_arr, is_identity_arr, matrices_arr,
                  quat_rotate)
from .segments import SKILL, SegmentIndex

SPLIT_RADIUS = 0.015
HAND_CLOSED = 0.5
MIN_OBJECT_POINTS = 10
FIXED = -1

TODO, DOING, DONE = "to-do", "doing", "done"


def stage_of(seg: SegmentIndex, object_id: int, t: int) -> str:
    _, s = seg.skill_of(object_id)
    if t < s.t_start:
        return TODO
    return DOING if t <= s.t_end else DONE


def stage_map(seg: SegmentIndex, K: int, L: int) -> np.ndarray:
    """(K, L) array of stage codes 0 to-do, 1 doing, 2 done."""
    out = np.zeros((K, L), dtype=np.int8)
    for k in range(K):
        _, s = seg.skill_of(k)
        out[k, s.t_start:s.t_end + 1] = 1
        out[k, s.t_end + 1:] = 2
    return out


def adapt_proprio(o_arm: Pose, source_action: Pose, adapted_action: Pose) -> Pose:
    """Move the state by the frame change that took the source action to the adapted one."""
    return compose(delta_between(source_action, adapted_action), o_arm)


def deltas_arr(src, tgt) -> np.ndarray:
    """Row-wise ``tgt ∘ src⁻¹``; rows with ``src == tgt`` give the exact identity."""
    src = np.asarray(src, dtype=np.float64)
    tgt = np.asarray(tgt, dtype=np.float64)
    out = compose_arr(tgt, inverse_arr(src))
    same = np.all(src == tgt, axis=-1)
    out[same] = (0, 0, 0, 1, 0, 0, 0)
    return out


def split_doing_frame(scene: LabeledCloud, todo_snapshot: Optional[LabeledCloud],
                      done_snapshot: Optional[LabeledCloud], radius: float = SPLIT_RADIUS):
    """(ee_cloud, object_cloud): scene points near either snapshot belong to the object."""
    refs = [s.points for s in (todo_snapshot, done_snapshot) if s is not None and len(s)]
    if not refs:
        return scene, LabeledCloud.empty()
    mask = proximity_mask(scene.points, np.concatenate(refs), radius)
    if mask.sum() < MIN_OBJECT_POINTS:
        raise DegenerateSplit(f"only {int(mask.sum())} points attributed to the object")
    return scene.subset(~mask), scene.subset(mask)


def _closed(hand) -> np.ndarray:
    hand = np.asarray(hand)
    if hand.shape[-1] == 0:
        return np.zeros(hand.shape[:-1], dtype=bool)
    return hand.mean(axis=-1) < HAND_CLOSED


def object_tracks(demo: Demonstration, seg: SegmentIndex) -> np.ndarray:
    """(K, L, 7) world displacement of each object from frame 0, NaN while carried.

    An object is carried from the frame its arm closes the hand inside the
    object's skill until the hand reopens; it then rests displaced by the
    ee motion in between. Disturbances recorded in ``extras`` compose on top.
    """
    K, L = demo.K, demo.L
    out = np.zeros((K, L, 7))
    out[..., 3] = 1.0
    disturb: Dict[int, List] = {}
    for d in demo.extras.get("disturbances", []):
        disturb.setdefault(int(d["object"]), []).append((int(d["frame"]), np.asarray(d["displacement"], float)))
    for k in range(K):
        arm, s = seg.skill_of(k)
        closed = _closed(demo.hand_action[:, arm])
        A = demo.arm_action[:, arm]
        events = sorted(disturb.get(k, []), key=lambda e: e[0])
        cur = np.array([0, 0, 0, 1.0, 0, 0, 0])
        grasp = None
        ei = 0
        for t in range(L):
            while ei < len(events) and events[ei][0] == t:
                if grasp is None and not np.isnan(cur[0]):
                    cur = compose_arr(events[ei][1], cur)
                ei += 1
            if s.t_start <= t <= s.t_end and not np.isnan(cur[0]):
                if grasp is None and closed[t] and (t == 0 or not closed[t - 1]):
                    grasp = (t, cur)
            if grasp is not None and not closed[t]:
                g, before = grasp
                cur = compose_arr(deltas_arr(A[g], A[t]), before)
                grasp = None
            out[k, t] = np.nan if grasp is not None else cur
        # still held past the skill: nothing static to track
    return out


@dataclass
class PreparedSource:
    """A parsed source plus its per-frame point groups; reuse across targets."""

    demo: Demonstration
    seg: SegmentIndex
    groups: np.ndarray  # (L, N) int8: arm a -> a, object k -> A + k, FIXED
    tracks: np.ndarray  # (K, L, 7)
    extras: dict = field(default_factory=dict)

    @property
    def arms(self):
        return self.demo.arms

    def group_of_object(self, k):
        return self.demo.arms + k


def assign_groups(demo: Demonstration, tracks: np.ndarray, radius: float = SPLIT_RADIUS) -> np.ndarray:
    L, N, A, K = demo.L, demo.N, demo.arms, demo.K
    pts = demo.points.reshape(-1, 3).astype(np.float64)
    best = np.full(L * N, np.inf)
    groups = np.full(L * N, -2, dtype=np.int16)
    frame_of = np.repeat(np.arange(L), N)
    labels0 = demo.labels
    obst = demo.points[0][labels0 == OBSTACLE].astype(np.float64)
    if len(obst):
        d, _ = cKDTree(obst).query(pts, distance_upper_bound=radius)
        hit = d < best
        best[hit], groups[hit] = d[hit], FIXED
    for k in range(K):
        ref0 = demo.points[0][labels0 == k].astype(np.float64)
        if len(ref0) == 0:
            continue
        tr = tracks[k]
        valid = ~np.isnan(tr[:, 0])
        keys = {}
        for t in np.flatnonzero(valid):
            keys.setdefault(tr[t].tobytes(), []).append(t)
        for key, frames in keys.items():
            T = np.frombuffer(key)
            ref = ref0 if is_identity_arr(T) else Pose.from_array(T).apply(ref0)
            rows = np.concatenate([np.arange(t * N, (t + 1) * N) for t in frames])
            d, _ = cKDTree(ref).query(pts[rows], distance_upper_bound=radius)
            hit = d < best[rows]
            best[rows[hit]] = d[hit]
            groups[rows[hit]] = A + k
    rest = groups == -2
    if A == 1:
        groups[rest] = 0
    else:
        ee = demo.arm_state[:, :, :3]  # (L, A, 3)
        idx = np.flatnonzero(rest)
        d = np.linalg.norm(pts[idx, None, :] - ee[frame_of[idx]], axis=2)
        groups[idx] = d.argmin(axis=1)
    groups = groups.reshape(L, N)
    # frame 0 carries ground-truth labels
    g0 = np.where(labels0 >= 0, A + labels0, np.where(labels0 == OBSTACLE, FIXED, groups[0]))
    if A > 1:
        ee0 = demo.arm_state[0, :, :3]
        near = np.linalg.norm(demo.points[0][:, None, :].astype(np.float64) - ee0[None], axis=2).argmin(axis=1)
        g0 = np.where(labels0 == EE, near, g0)
    else:
        g0 = np.where(labels0 == EE, 0, g0)
    groups[0] = g0
    return groups.astype(np.int8)


def prepare(demo: Demonstration, seg: Optional[SegmentIndex] = None, radius: float = SPLIT_RADIUS,
            **parse_kw) -> PreparedSource:
    seg = seg or demo.segment_index or parse(demo, **parse_kw)
    tracks = object_tracks(demo, seg)
    return PreparedSource(demo, seg, assign_groups(demo, tracks, radius), tracks)


def _rigid(x, T):
    """Apply poses ``T`` (one, or one per row) to float32 rows ``x``."""
    if T.ndim == 1 or np.all(T == T[0]):
        M = matrices_arr(T if T.ndim == 1 else T[0]).astype(np.float32)
        return x @ M[:3, :3].T + M[:3, 3]
    return (quat_rotate(T[:, 3:], x) + T[:, :3]).astype(np.float32)


def _move_groups(points, groups, transforms):
    """Apply per-frame, per-group poses ``transforms`` (F, G, 7) to points (F, N, 3) in place.

    The largest moving group is applied to whole frames with one batched
    matmul; the other groups are patched afterwards from the original
    values. Points whose transform is the exact identity keep their bits.
    """
    F, N = groups.shape
    G = transforms.shape[1]
    ident = is_identity_arr(transforms)
    member = [groups == g for g in range(G)]
    moving = [g for g in range(G) if not ident[:, g].all()]
    if not moving:
        return
    bulk = max(moving, key=lambda g: int(member[g].sum()))
    rows = np.flatnonzero(~ident[:, bulk])
    flat = points.reshape(-1, 3)
    patches = []
    for g in range(G):
        if g == bulk:
            continue
        need = member[g] & (~ident[:, g] | ~ident[:, bulk])[:, None]
        idx = np.flatnonzero(need)
        if len(idx) == 0:
            continue
        f = idx // N
        vals = flat[idx]
        move = ~ident[f, g]
        if move.any():
            Tg = transforms[~ident[:, g], g]
            # one pose for every moving frame is the common case (a resting object)
            T = Tg[0] if np.all(Tg == Tg[0]) else transforms[f[move], g]
            if move.all():
                vals = _rigid(vals, T)
            else:
                vals = vals.copy()
                vals[move] = _rigid(vals[move], T)
        patches.append((idx, vals))
    if len(rows):
        T = transforms[rows, bulk]
        if np.all(T == T[0]):
            points[rows] = _rigid(points[rows].reshape(-1, 3), T[0]).reshape(len(rows), N, 3)
        else:
            M = matrices_arr(T)
            Rt = np.ascontiguousarray(M[:, :3, :3].transpose(0, 2, 1), dtype=np.float32)
            sel = slice(None) if len(rows) == F else rows
            moved = np.matmul(points[sel], Rt)
            moved += M[:, None, :3, 3].astype(np.float32)
            points[sel] = moved
    for idx, vals in patches:
        flat[idx] = vals


def _arm_motion(demo, plan: ActionPlan):
    """Adapted states (L', A, 7) and per-frame cloud transforms for each arm (L', A, 7)."""
    src = plan.source_index
    Lp, A = src.shape
    states = np.empty((Lp, A, 7))
    cloud = np.empty((Lp, A, 7))
    for a in range(A):
        o = demo.arm_state[src[:, a], a]
        E = deltas_arr(demo.arm_action[src[:, a], a], plan.arm_action[:, a])
        st = compose_arr(E, o)
        ident = is_identity_arr(E)
        st[ident] = o[ident]
        if plan.arm_state is not None:
            explicit = ~np.isnan(plan.arm_state[:, a, 0])
            st[explicit] = plan.arm_state[explicit, a]
        states[:, a] = st
        # arm points always come from the arm's own matched frame (see _swap_own_points)
        cloud[:, a] = E
        if plan.arm_state is not None:
            explicit = ~np.isnan(plan.arm_state[:, a, 0])
            cloud[explicit, a] = deltas_arr(o[explicit], st[explicit])
    return states, cloud


def _stride(n, m):
    """``m`` indices spread evenly over ``range(n)``, cycling when ``m > n``."""
    if m > n:
        return np.arange(m) % n
    return np.linspace(0, n - 1, m).round().astype(np.int64)


def _swap_own_points(points, prep: PreparedSource, src, transforms):
    """Where an arm's timeline runs ahead of or behind arm 0, rebuild its points from its own frame.

    The arm's own groups (its hand and the objects it manipulates) are taken
    from the arm's matched source frame and moved. Grasping can regroup
    points between frames, so slots are refilled label by label: each label
    in the base frame's slots is resampled by an even stride from the moved
    points carrying that label, falling back to all moved points when the
    label is absent. N and the per-point labels are unchanged.
    """
    demo = prep.demo
    A = demo.arms
    base = src[:, 0]
    for a in range(1, A):
        own = np.array([a] + [A + k for k in demo.arm_object_map[a]], dtype=prep.groups.dtype)
        for t in np.flatnonzero(src[:, a] != base):
            slot = np.isin(prep.groups[base[t]], own)
            g = prep.groups[src[t, a]]
            take = np.isin(g, own)
            if not slot.any() or not take.any():
                continue
            pts = demo.points[src[t, a]][take][None].copy()
            _move_groups(pts, g[take][None], transforms[t:t + 1])
            pts, lab = pts[0], demo.labels[take]
            slot_idx = np.flatnonzero(slot)
            for label in np.unique(demo.labels[slot_idx]):
                dst = slot_idx[demo.labels[slot_idx] == label]
                pool = pts[lab == label]
                if not len(pool):
                    pool = pts
                points[t][dst] = pool[_stride(len(pool), len(dst))]


def placements(prep: PreparedSource):
    """``(object, arm, release_frame, host)`` for objects released inside another object's skill.

    Once released there, an object rests wherever that skill put it, so it
    moves with the host object from then on.
    """
    out = []
    for k in range(prep.demo.K):
        tr = prep.tracks[k, :, 0]
        freed = np.flatnonzero(np.isnan(tr[:-1]) & ~np.isnan(tr[1:]))
        if not len(freed):
            continue
        r = int(freed[-1]) + 1
        arm, _ = prep.seg.skill_of(k)
        for s in prep.seg[arm]:
            if s.t_start <= r <= s.t_end and s.kind == SKILL and s.object_id not in (k, FIXED):
                out.append((k, arm, r, s.object_id))
    return out


def synthesize_demo(source, seg: Optional[SegmentIndex], target: Sequence[Pose], plan: ActionPlan,
                    prepared: Optional[PreparedSource] = None, object_deltas: Optional[np.ndarray] = None,
                    extras: Optional[dict] = None, validate: bool = True) -> Demonstration:
    """Assemble the demonstration for ``plan``.

    ``object_deltas`` (L', K, 7) overrides the constant per-object deltas of
    the plan frame by frame. Objects released into another object's skill
    take that object's delta afterwards (see :func:`placements`).
    """
    prep = prepared if prepared is not None else prepare(source, seg)
    demo = prep.demo
    base = plan.source_index[:, 0]
    if base[0] != 0:
        raise ValueError("a synthesized trajectory must start from source frame 0")
    Lp, A, K = plan.length, plan.arms, demo.K
    states, ee_tf = _arm_motion(demo, plan)
    if object_deltas is None:
        obj = np.empty((K, 7))
        for k in range(K):
            if k not in plan.deltas:
                raise MissingDelta(f"no delta for object {k}")
            obj[k] = plan.deltas[k].as_array()
        object_deltas = np.broadcast_to(obj, (Lp, K, 7))
    src = plan.source_index
    moves = placements(prep)
    if moves:
        object_deltas = object_deltas.copy()
        for k, arm, r, host in moves:
            rows = src[:, arm] >= r
            object_deltas[rows, k] = object_deltas[rows, host]
    transforms = np.concatenate([ee_tf, object_deltas], axis=1)
    points = demo.points[base]
    _move_groups(points, prep.groups[base], transforms)
    if A > 1:
        _swap_own_points(points, prep, src, transforms)
    arms = np.arange(A)
    out = Demonstration(
        points=points,
        labels=demo.labels.copy(),
        arm_state=states,
        hand_state=demo.hand_state[src, arms],
        arm_action=plan.arm_action.copy(),
        hand_action=plan.hand_action.copy(),
        init_config=list(target),
        object_names=list(demo.object_names),
        task=demo.task,
        segment_index=plan.segment_index(),
        arm_object_map=[list(m) for m in demo.arm_object_map],
        camera=demo.camera,
        extras=dict(demo.extras) if extras is None else extras,
    )
    return check(out) if validate else out


def synthesize_frame(prepared: PreparedSource, t: int, deltas: Dict[int, Pose], ee_delta) -> Frame:
    """Edit source frame ``t``: objects by ``deltas``, arm groups by ``ee_delta`` (one Pose or one per arm)."""
    demo = prepared.demo
    A = demo.arms
    ee = list(ee_delta) if isinstance(ee_delta, (list, tuple)) else [ee_delta] * A
    groups = prepared.groups[t]
    present = {int(g) - A for g in np.unique(groups) if g >= A}
    for k in present:
        if k not in deltas:
            raise MissingDelta(f"no delta for object {k}")
    T = np.empty((1, A + demo.K, 7))
    for a in range(A):
        T[0, a] = ee[a].as_array()
    for k in range(demo.K):
        T[0, A + k] = deltas.get(k, Pose.identity()).as_array()
    pts = demo.points[t:t + 1].copy()
    _move_groups(pts, groups[None], T)
    state = demo.arm_state[t].copy()
    for a in range(A):
        if not ee[a].is_identity():
            state[a] = compose(ee[a], Pose.from_array(state[a])).as_array()
    return Frame(pts[0], demo.labels.copy() if t == 0 else None, state, demo.hand_state[t].copy(),
                 demo.arm_action[t].copy(), demo.hand_action[t].copy())
