"""
Demonstration container: ``meta.json`` header plus a dense ``frames.bin``.

``frames.bin`` layout, per frame in order: N x 3 float32 points, N int32
labels (frame 0 only), then per arm 7 float64 arm_state, H float64
hand_state, 7 float64 arm_action, H float64 hand_action. All little-endian.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import FormatError, ValidationError
from .pointcloud import BACKGROUND, LabeledCloud
from .se3 import Pose
from .segments import SegmentIndex

FORMAT_VERSION = 1
META = "meta.json"
FRAMES = "frames.bin"
MANIFEST = "dataset.json"


@dataclass
class Frame:
    points: np.ndarray
    labels: Optional[np.ndarray]
    arm_state: np.ndarray
    hand_state: np.ndarray
    arm_action: np.ndarray
    hand_action: np.ndarray

    @property
    def cloud(self):
        if self.labels is None:
            raise ValueError("labels are only stored for frame 0")
        return LabeledCloud(self.points, self.labels)


@dataclass
class Demonstration:
    """One trajectory. Per-frame arrays are stacked along the first axis.

    points (L, N, 3) float32, labels (N,) int32 for frame 0, arm poses
    (L, A, 7) and hand vectors (L, A, H) in float64.
    """

    points: np.ndarray
    labels: np.ndarray
    arm_state: np.ndarray
    hand_state: np.ndarray
    arm_action: np.ndarray
    hand_action: np.ndarray
    init_config: List[Pose]
    object_names: List[str]
    task: str = ""
    segment_index: Optional[SegmentIndex] = None
    arm_object_map: Optional[List[List[int]]] = None
    camera: Pose = field(default_factory=Pose.identity)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int32)
        self.arm_state = np.asarray(self.arm_state, dtype=np.float64)
        self.hand_state = np.asarray(self.hand_state, dtype=np.float64)
        self.arm_action = np.asarray(self.arm_action, dtype=np.float64)
        self.hand_action = np.asarray(self.hand_action, dtype=np.float64)
        self.init_config = list(self.init_config)
        self.object_names = list(self.object_names)
        if self.arm_object_map is None:
            self.arm_object_map = [list(range(len(self.init_config)))] + [[] for _ in range(self.arms - 1)]

    @property
    def L(self):
        return self.points.shape[0]

    @property
    def N(self):
        return self.points.shape[1]

    @property
    def K(self):
        return len(self.init_config)

    @property
    def H(self):
        return self.hand_action.shape[2]

    @property
    def arms(self):
        return self.arm_action.shape[1]

    def frame(self, t) -> Frame:
        return Frame(self.points[t], self.labels if t == 0 else None, self.arm_state[t],
                     self.hand_state[t], self.arm_action[t], self.hand_action[t])

    def cloud(self, t=0) -> LabeledCloud:
        """Frame ``t`` points with the frame-0 labels attached (exact only while nothing moved)."""
        return LabeledCloud(self.points[t], self.labels)

    def arm_of(self, object_id):
        for a, objs in enumerate(self.arm_object_map):
            if object_id in objs:
                return a
        return 0

    def copy(self):
        return Demonstration(
            self.points.copy(), self.labels.copy(), self.arm_state.copy(), self.hand_state.copy(),
            self.arm_action.copy(), self.hand_action.copy(), list(self.init_config),
            list(self.object_names), self.task, self.segment_index,
            [list(m) for m in self.arm_object_map], self.camera, json.loads(json.dumps(self.extras)))

    def equals(self, other) -> bool:
        """Bitwise equality of every payload array and header field."""
        arrays = ("points", "labels", "arm_state", "hand_state", "arm_action", "hand_action")
        if any(getattr(self, a).tobytes() != getattr(other, a).tobytes()
               or getattr(self, a).shape != getattr(other, a).shape for a in arrays):
            return False
        return _meta(self) == _meta(other)


def validate(demo: Demonstration) -> List[str]:
    """Every violated invariant as a human-readable line; empty when valid."""
    out = []
    L = demo.points.shape[0] if demo.points.ndim == 3 else 0
    if demo.points.ndim != 3 or demo.points.shape[2:] != (3,):
        return [f"points must be (L, N, 3), got {demo.points.shape}"]
    if L < 2:
        out.append(f"trajectory length {L} < 2")
    N = demo.points.shape[1]
    if demo.labels.shape != (N,):
        out.append(f"labels shape {demo.labels.shape} != ({N},)")
    for name in ("arm_state", "arm_action"):
        arr = getattr(demo, name)
        if arr.ndim != 3 or arr.shape[0] != L or arr.shape[2] != 7:
            out.append(f"{name} must be (L, A, 7), got {arr.shape}")
    for name in ("hand_state", "hand_action"):
        arr = getattr(demo, name)
        if arr.ndim != 3 or arr.shape[0] != L:
            out.append(f"{name} must be (L, A, H), got {arr.shape}")
    if out:
        return out
    A = demo.arm_action.shape[1]
    if demo.arm_state.shape[1] != A or demo.hand_state.shape[1] != A or demo.hand_action.shape[1] != A:
        out.append("arm count differs between state/action arrays")
    if A not in (1, 2):
        out.append(f"arm count {A} not in (1, 2)")
    if demo.hand_state.shape[2] != demo.hand_action.shape[2]:
        out.append("hand state and hand action dimensions differ")
    if not np.all(np.isfinite(demo.points)):
        out.append("non-finite point coordinates")
    for name in ("arm_state", "arm_action"):
        arr = getattr(demo, name)
        norms = np.linalg.norm(arr[..., 3:], axis=-1)
        bad = np.argwhere(np.abs(norms - 1.0) > 1e-9)
        for t, a in bad:
            out.append(f"frame {t}: arm {a} {name} quaternion norm {norms[t, a]:.6g}")
        if not np.all(np.isfinite(arr)):
            out.append(f"non-finite values in {name}")
    K = len(demo.init_config)
    if len(demo.object_names) != K:
        out.append(f"{len(demo.object_names)} object names for {K} init poses")
    for k, p in enumerate(demo.init_config):
        if abs(np.linalg.norm(p.quat) - 1.0) > 1e-9:
            out.append(f"init pose {k}: quaternion norm {np.linalg.norm(p.quat):.6g}")
    labs = np.unique(demo.labels)
    if np.any(labs == BACKGROUND):
        out.append("background label -2 present after preprocessing")
    if np.any(labs >= K):
        out.append(f"labels reference objects >= K={K}")
    if len(demo.arm_object_map) != A:
        out.append(f"arm_object_map has {len(demo.arm_object_map)} entries for {A} arms")
    if demo.segment_index is not None:
        if len(demo.segment_index) != A:
            out.append(f"segment index has {len(demo.segment_index)} arms, demo has {A}")
        out.extend(demo.segment_index.problems(L))
    return out


def check(demo: Demonstration) -> Demonstration:
    problems = validate(demo)
    if problems:
        raise ValidationError(problems)
    return demo


def _meta(demo: Demonstration) -> dict:
    return {
        "version": FORMAT_VERSION,
        "task": demo.task,
        "L": demo.L,
        "N": demo.N,
        "K": demo.K,
        "H": demo.H,
        "arms": demo.arms,
        "object_names": list(demo.object_names),
        "init_poses": [p.as_array().tolist() for p in demo.init_config],
        "segment_index": None if demo.segment_index is None else demo.segment_index.to_json(),
        "camera_pose": demo.camera.as_array().tolist(),
        "arm_object_map": [list(map(int, m)) for m in demo.arm_object_map],
        "extras": demo.extras,
    }


def _arm_block(demo):
    return np.concatenate([demo.arm_state, demo.hand_state, demo.arm_action, demo.hand_action], axis=2)


def write(demo: Demonstration, path) -> None:
    check(demo)
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    L, N = demo.L, demo.N
    width = 14 + 2 * demo.H
    rec = np.dtype([("pts", "<f4", (N, 3)), ("arm", "<f8", (demo.arms, width))])
    body = np.empty(L, dtype=rec)
    body["pts"] = demo.points
    body["arm"] = _arm_block(demo)
    with open(path / FRAMES, "wb") as f:
        f.write(body[0]["pts"].tobytes())
        f.write(demo.labels.astype("<i4").tobytes())
        f.write(body[0]["arm"].tobytes())
        f.write(body[1:].tobytes())
    tmp = path / (META + ".tmp")
    tmp.write_text(json.dumps(_meta(demo), indent=1), encoding="utf-8")
    os.replace(tmp, path / META)


def read(path, validate_demo=True) -> Demonstration:
    path = Path(path)
    try:
        meta = json.loads((path / META).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise FormatError(f"{path}: missing {META}") from e
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"{path}: unreadable {META}: {e}") from e
    if meta.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported container version {meta.get('version')!r}")
    try:
        L, N, K, H, A = (int(meta[k]) for k in ("L", "N", "K", "H", "arms"))
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: malformed header: {e}") from e
    width = 14 + 2 * H
    try:
        raw = (path / FRAMES).read_bytes()
    except FileNotFoundError as e:
        raise FormatError(f"{path}: missing {FRAMES}") from e
    expected = L * (12 * N + 8 * A * width) + 4 * N
    if len(raw) != expected:
        raise FormatError(f"{path}: {FRAMES} has {len(raw)} bytes, expected {expected}")
    rec = np.dtype([("pts", "<f4", (N, 3)), ("arm", "<f8", (A, width))])
    head = 12 * N
    pts0 = np.frombuffer(raw, "<f4", N * 3, 0).reshape(N, 3)
    labels = np.frombuffer(raw, "<i4", N, head).astype(np.int32)
    arm0 = np.frombuffer(raw, "<f8", A * width, head + 4 * N).reshape(A, width)
    rest = np.frombuffer(raw, rec, L - 1, head + 4 * N + 8 * A * width)
    points = np.concatenate([pts0[None], rest["pts"]]).astype(np.float32)
    arm = np.concatenate([arm0[None], rest["arm"]]).astype(np.float64)
    seg = meta.get("segment_index")
    demo = Demonstration(
        points=points,
        labels=labels,
        arm_state=arm[..., 0:7],
        hand_state=arm[..., 7:7 + H],
        arm_action=arm[..., 7 + H:14 + H],
        hand_action=arm[..., 14 + H:],
        init_config=[Pose.from_array(p) for p in meta["init_poses"]],
        object_names=meta["object_names"],
        task=meta.get("task", ""),
        segment_index=None if seg is None else SegmentIndex.from_json(seg),
        arm_object_map=meta.get("arm_object_map"),
        camera=Pose.from_array(meta.get("camera_pose", Pose.identity().as_array())),
        extras=meta.get("extras") or {},
    )
    if len(demo.init_config) != K:
        raise FormatError(f"{path}: header K={K} but {len(demo.init_config)} init poses")
    if validate_demo:
        check(demo)
    return demo


# --- datasets -----------------------------------------------------------------

def write_manifest(root, demos, **info) -> dict:
    manifest = {"version": FORMAT_VERSION, "demos": list(demos), **info}
    Path(root).mkdir(parents=True, exist_ok=True)
    (Path(root) / MANIFEST).write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    return manifest


def read_manifest(root) -> dict:
    try:
        return json.loads((Path(root) / MANIFEST).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise FormatError(f"{root}: missing {MANIFEST}") from e


def list_containers(root) -> List[Path]:
    """Container directories of a dataset: manifest order if present, else sorted scan."""
    root = Path(root)
    if (root / MANIFEST).exists():
        return [root / d for d in read_manifest(root)["demos"]]
    return sorted(p for p in root.iterdir() if (p / META).exists())
