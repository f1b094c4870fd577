"""Re-target source actions to a new object configuration.

Skill segments follow their object rigidly; motion segments are replanned
between the adapted skill endpoints. When both endpoints of a motion are
unchanged the source frames are copied, so a same-config generation is a
bitwise copy.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import UnreachableTarget
from .planner import PlanRequest, linear_plan, rrt_plan
from .se3 import Pose, compose_arr, delta_between
from .segments import SKILL, Segment, SegmentIndex
from .shapes import point_in_polygon

HOLD = -1  # segment ordinal of padding frames


@dataclass
class ArmTrack:
    """Adapted actions for one arm plus per-frame bookkeeping."""

    action: np.ndarray  # (M, 7)
    hand: np.ndarray  # (M, H)
    source: np.ndarray  # (M,) matched source frame
    ordinal: np.ndarray  # (M,) index into the arm's segment list, HOLD for padding
    inserted: np.ndarray  # (M,) bool, frames with no source counterpart in time

    def __len__(self):
        return len(self.action)

    @classmethod
    def concat(cls, parts):
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                     ("action", "hand", "source", "ordinal", "inserted")))

    def pad(self, length):
        extra = length - len(self)
        if extra <= 0:
            return self
        rep = lambda a: np.repeat(a[-1:], extra, axis=0)  # noqa: E731
        return ArmTrack(np.concatenate([self.action, rep(self.action)]),
                        np.concatenate([self.hand, rep(self.hand)]),
                        np.concatenate([self.source, rep(self.source)]),
                        np.concatenate([self.ordinal, np.full(extra, HOLD)]),
                        np.concatenate([self.inserted, np.ones(extra, bool)]))


@dataclass
class ActionPlan:
    arm_action: np.ndarray  # (L', A, 7)
    hand_action: np.ndarray  # (L', A, H)
    source_index: np.ndarray  # (L', A)
    ordinal: np.ndarray  # (L', A)
    inserted: np.ndarray  # (L', A)
    segments: tuple  # per arm, the source segment list the ordinals refer to
    deltas: Dict[int, Pose]
    arm_state: Optional[np.ndarray] = None  # explicit states, NaN rows = derive from actions

    @property
    def length(self):
        return len(self.arm_action)

    @property
    def arms(self):
        return self.arm_action.shape[1]

    def provenance(self, arm=0) -> List[str]:
        """Human-readable tag per frame: ``skill k``, ``motion k``, ``inserted`` or ``hold``."""
        out = []
        segs = self.segments[arm]
        for o, ins in zip(self.ordinal[:, arm], self.inserted[:, arm]):
            if o == HOLD:
                out.append("hold")
            elif ins and segs[o].kind == SKILL:
                out.append("inserted")
            else:
                out.append(f"{segs[o].kind} {segs[o].object_id}")
        return out

    def segment_index(self) -> SegmentIndex:
        """Segment intervals of the adapted timeline (padding joins the last segment)."""
        arms = []
        for a, segs in enumerate(self.segments):
            counts = np.bincount(self.ordinal[:, a][self.ordinal[:, a] >= 0], minlength=len(segs))
            counts[-1] += int(np.sum(self.ordinal[:, a] == HOLD))
            out, cursor = [], 0
            for s, n in zip(segs, counts):
                out.append(Segment(s.kind, s.object_id, cursor, cursor + int(n) - 1))
                cursor += int(n)
            arms.append(tuple(out))
        return SegmentIndex(tuple(arms))

    @classmethod
    def from_tracks(cls, tracks: Sequence[ArmTrack], segments, deltas):
        n = max(len(t) for t in tracks)
        tracks = [t.pad(n) for t in tracks]
        st = lambda f: np.stack([getattr(t, f) for t in tracks], axis=1)  # noqa: E731
        return cls(st("action"), st("hand"), st("source"), st("ordinal"), st("inserted"),
                   tuple(tuple(s) for s in segments), dict(deltas))


def adapt_skill(segment_actions, source_obj: Pose, target_obj: Pose) -> np.ndarray:
    """Move every ee pose with the object: ``out = (target ∘ source⁻¹) ∘ in``."""
    actions = np.asarray(segment_actions, dtype=np.float64).reshape(-1, 7)
    delta = delta_between(source_obj, target_obj)
    if delta.is_identity():
        return actions.copy()
    return compose_arr(np.broadcast_to(delta.as_array(), actions.shape), actions)


def adapt_hand(hand_actions) -> np.ndarray:
    return np.array(hand_actions, copy=True)


def config_deltas(source: Sequence[Pose], target: Sequence[Pose]) -> Dict[int, Pose]:
    if len(source) != len(target):
        raise ValueError(f"target has {len(target)} poses for {len(source)} objects")
    return {k: delta_between(s, t) for k, (s, t) in enumerate(zip(source, target))}


def check_reachable(target: Sequence[Pose], workspace) -> None:
    if workspace is None:
        return
    xy = np.array([p.position[:2] for p in target])
    inside = point_in_polygon(xy, workspace)
    if not inside.all():
        bad = [k for k in np.flatnonzero(~inside)]
        raise UnreachableTarget(f"objects {bad} outside the reachable workspace: "
                                f"{[tuple(np.round(xy[k], 4)) for k in bad]}")


def _arc_fractions(pos):
    if len(pos) < 2:
        return np.zeros(len(pos))
    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pos, axis=0), axis=1))])
    if cum[-1] <= 0:
        return np.linspace(0.0, 1.0, len(pos))
    return cum / cum[-1]


def match_progress(plan_fracs, source_frames, source_pos):
    """Source frame of nearest normalized arc-length progress for each planned frame."""
    if len(source_frames) == 0:
        raise ValueError("no source frames to match")
    g = _arc_fractions(source_pos)
    idx = np.abs(plan_fracs[:, None] - g[None, :]).argmin(axis=1)
    return np.asarray(source_frames)[idx]


def _plan(req: PlanRequest, start: Pose, goal: Pose) -> np.ndarray:
    r = req.between(start, goal)
    return rrt_plan(r) if len(r.obstacle_points) else linear_plan(r)


def adapt_arm(demo, arm: int, segments: Sequence[Segment], deltas: Dict[int, Pose],
              planner: PlanRequest, force_replan: bool = False,
              start: Optional[np.ndarray] = None, base_ordinal: int = 0) -> ArmTrack:
    """Adapted actions for one arm over ``segments`` (which must tile a frame range).

    ``start`` overrides the pose the first motion leaves from; by default it
    is the source action at that motion's first frame.
    """
    A = demo.arm_action[:, arm]
    Hd = demo.hand_action[:, arm]
    parts: List[ArmTrack] = []
    prev_pose = None if start is None else np.asarray(start, dtype=np.float64)
    prev_hand = None
    prev_frame = None
    for j, seg in enumerate(segments):
        ordinal = base_ordinal + j
        if seg.kind == SKILL:
            fr = np.arange(seg.t_start, seg.t_end + 1)
            if len(fr) == 0:
                continue
            delta = deltas.get(seg.object_id, Pose.identity())
            act = A[fr].copy() if delta.is_identity() else compose_arr(
                np.broadcast_to(delta.as_array(), (len(fr), 7)), A[fr])
            parts.append(ArmTrack(act, adapt_hand(Hd[fr]), fr, np.full(len(fr), ordinal),
                                  np.zeros(len(fr), bool)))
            prev_pose, prev_hand, prev_frame = act[-1], Hd[fr[-1]], int(fr[-1])
            continue
        # motion: connect the previous pose to the next skill's first adapted pose
        nxt = segments[j + 1] if j + 1 < len(segments) else None
        fr = np.arange(seg.t_start, seg.t_end + 1)
        if nxt is None or nxt.kind != SKILL:
            raise ValueError("a motion segment must be followed by a skill segment")
        delta = deltas.get(nxt.object_id, Pose.identity())
        src_goal = A[nxt.t_start]
        goal = src_goal.copy() if delta.is_identity() else compose_arr(delta.as_array(), src_goal)
        first = prev_pose is None
        if first:
            src_start = A[seg.t_start] if len(fr) else A[nxt.t_start]
            start_pose = src_start
        else:
            src_start = A[prev_frame]
            start_pose = prev_pose
        unchanged = np.array_equal(start_pose, src_start) and np.array_equal(goal, src_goal)
        if unchanged and not force_replan:
            if len(fr):
                parts.append(ArmTrack(A[fr].copy(), Hd[fr].copy(), fr, np.full(len(fr), ordinal),
                                      np.zeros(len(fr), bool)))
            if len(fr):
                prev_pose, prev_hand, prev_frame = A[fr[-1]], Hd[fr[-1]], int(fr[-1])
            continue
        path = _plan(planner, Pose.from_array(start_pose), Pose.from_array(goal))
        fracs = _arc_fractions(path[:, :3])
        # the path ends on the skill's first pose; it starts on the frame already emitted
        keep = slice(0, -1) if first else slice(1, -1)
        path, fracs = path[keep], fracs[keep]
        if len(path) == 0:
            continue
        if len(fr):
            src = match_progress(fracs, fr, A[fr, :3])
        else:
            anchor = seg.t_start - 1 if seg.t_start > 0 else nxt.t_start
            src = np.full(len(path), anchor)
        hold = Hd[seg.t_start] if first and len(fr) else (Hd[nxt.t_start] if prev_hand is None else prev_hand)
        parts.append(ArmTrack(path, np.repeat(np.asarray(hold)[None], len(path), axis=0), src,
                              np.full(len(path), ordinal), np.ones(len(path), bool)))
        prev_pose = path[-1]
    if not parts:
        H = demo.hand_action.shape[2]
        return ArmTrack(np.zeros((0, 7)), np.zeros((0, H)), np.zeros(0, int), np.zeros(0, int),
                        np.zeros(0, bool))
    return ArmTrack.concat(parts)


def adapt_trajectory(demo, seg: Optional[SegmentIndex], target: Sequence[Pose],
                     planner: Optional[PlanRequest] = None, workspace=None,
                     force_replan: bool = False) -> ActionPlan:
    """Adapt every arm to ``target`` (one pose per object)."""
    seg = seg if seg is not None else demo.segment_index
    if seg is None:
        raise ValueError("demonstration has no segment index; parse it first")
    target = list(target)
    check_reachable(target, workspace)
    deltas = config_deltas(demo.init_config, target)
    tracks = []
    for a in range(demo.arms):
        req = planner if planner is not None else PlanRequest(Pose.identity(), Pose.identity())
        if isinstance(planner, (list, tuple)):
            req = planner[a]
        tracks.append(adapt_arm(demo, a, seg[a], deltas, req, force_replan))
    return ActionPlan.from_tracks(tracks, seg.arms, deltas)


def adapt_bimanual(demo, seg: Optional[SegmentIndex], target: Sequence[Pose],
                   planners: Optional[Sequence[PlanRequest]] = None, workspace=None) -> ActionPlan:
    """Each arm follows only the objects it manipulates; the shorter arm holds its last pose."""
    if demo.arm_object_map is None or len(demo.arm_object_map) != demo.arms:
        raise ValueError("bimanual adaptation needs an arm_object_map entry per arm")
    if planners is None:
        planners = [PlanRequest(Pose.identity(), Pose.identity())] * demo.arms
    return adapt_trajectory(demo, seg, target, list(planners), workspace)
