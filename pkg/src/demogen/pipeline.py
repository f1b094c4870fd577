"""Parse, adapt and synthesize a dataset of demonstrations from a few sources."""
from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import demo_store
from .adapter import adapt_trajectory
from .augment import (GenerationSpec, Target, adr_augment, obstacle_augment, plan_dataset, resume_frame,
                      target_config)
from .demo_store import Demonstration
from .errors import DemoGenError
from .planner import PlanRequest
from .se3 import Pose
from .shapes import Primitive
from .synthesis import PreparedSource, prepare, synthesize_demo

log = logging.getLogger(__name__)


class Generator:
    """Turns target configurations into demonstrations for one prepared source."""

    def __init__(self, source, planner: Optional[PlanRequest] = None, workspace=None, task=None,
                 validate: bool = True):
        self.prep = source if isinstance(source, PreparedSource) else prepare(source)
        self.planner = planner or PlanRequest(Pose.identity(), Pose.identity())
        self.task = task
        self.workspace = workspace if workspace is not None else (task.workspace if task is not None else None)
        self.validate = validate

    @property
    def source(self) -> Demonstration:
        return self.prep.demo

    def config(self, coords) -> List[Pose]:
        return target_config(self.source.init_config, coords)

    def generate(self, target, extras: Optional[dict] = None) -> Demonstration:
        """``target`` is a list of object poses or coordinates accepted by ``target_config``."""
        config = list(target) if target and isinstance(target[0], Pose) else self.config(target)
        if self.task is not None:
            self.task.check_config(config)
        demo = self.source
        plan = adapt_trajectory(demo, self.prep.seg, config, self.planner, self.workspace)
        if extras is None:
            extras = dict(demo.extras)
            extras["source"] = False
        return synthesize_demo(demo, self.prep.seg, config, plan, prepared=self.prep, extras=extras,
                               validate=self.validate)


def apply_adr(demo: Demonstration, adr: dict, planner: Optional[PlanRequest] = None,
              workspace=None) -> Demonstration:
    """Chain the disturbances of an ``adr`` block: ``times`` are fractions of the object's skill."""
    k = int(adr.get("object", 0))
    pause = int(adr.get("pause", 5))
    for frac, d in zip(adr["times"], adr["displacements"]):
        _, s = demo.segment_index.skill_of(k)
        t = s.t_start + int(round(float(frac) * (s.t_end - s.t_start)))
        if demo.extras.get("adr"):
            t = max(t, resume_frame(demo) + 1)
        demo = adr_augment(demo, k, t, _displacement(d), pause, planner=planner, workspace=workspace)
    return demo


def _displacement(d) -> Pose:
    d = [float(v) for v in d]
    if len(d) == 7:
        return Pose.from_array(d)
    xyz = (d + [0.0, 0.0])[:3] if len(d) < 3 else d[:3]
    return Pose.from_yaw(np.radians(d[3]), xyz) if len(d) == 4 else Pose.from_translation(xyz)


def apply_obstacles(demo: Demonstration, obstacle: dict, planner: Optional[PlanRequest] = None) -> Demonstration:
    prims = [Primitive.from_json(p) for p in obstacle.get("primitives", [])]
    return obstacle_augment(demo, prims, float(obstacle.get("clearance", 0.06)),
                            int(obstacle.get("points", 256)), int(obstacle.get("seed", 0)), planner=planner)


@dataclass
class GenerationReport:
    demos: list = field(default_factory=list)  # container names, or Demonstration objects when not writing
    rejected: list = field(default_factory=list)
    times: list = field(default_factory=list)  # seconds per generated trajectory
    total: float = 0.0
    expected: int = 0

    @property
    def ok(self) -> bool:
        return not self.rejected

    def summary(self) -> dict:
        t = np.asarray(self.times) if self.times else np.zeros(1)
        return {"generated": len(self.demos), "rejected": len(self.rejected), "expected": self.expected,
                "total_seconds": self.total, "per_trajectory_median_seconds": float(np.median(t)),
                "per_trajectory_mean_seconds": float(t.mean())}


# worker-process state, filled by _init_worker
_W: dict = {}


def _init_worker(sources, spec_json, task_json, out):
    from .sim.tasks import TaskSpec
    spec = GenerationSpec.from_json(spec_json)
    task = TaskSpec.from_json(task_json) if task_json else None
    srcs = [demo_store.read(s) if isinstance(s, (str, os.PathLike)) else s for s in sources]
    _W.update(spec=spec, task=task, out=out, gens=[_generator(s, spec, task) for s in srcs])


def _generator(source, spec: GenerationSpec, task) -> Generator:
    return Generator(source, spec.plan_request(), spec.workspace, task)


def _job(i: int, target: Target):
    spec, gens, out = _W["spec"], _W["gens"], _W["out"]
    t0 = time.perf_counter()
    try:
        gen = gens[target.source % len(gens)]
        demo = gen.generate(target.coords)
        if spec.adr:
            demo = apply_adr(demo, spec.adr, gen.planner, gen.workspace)
        if spec.obstacle:
            demo = apply_obstacles(demo, spec.obstacle, gen.planner)
    except DemoGenError as e:
        return i, None, time.perf_counter() - t0, f"{type(e).__name__}: {e}"
    dt = time.perf_counter() - t0
    if out is None:
        return i, demo, dt, None
    name = f"demo_{i:05d}"
    demo_store.write(demo, Path(out) / name)
    return i, name, dt, None


def generate_dataset(sources: Sequence, spec: GenerationSpec, out=None, task=None, workers: int = 1,
                     **manifest_info) -> GenerationReport:
    """Generate every target of ``spec``; rejected targets are reported, never emitted.

    ``sources`` are demonstrations or container paths; target ``source`` indices
    wrap around when there are fewer sources than ``spec.num_sources``.
    """
    if not sources:
        raise ValueError("at least one source demonstration is needed")
    targets = plan_dataset(spec)
    report = GenerationReport(expected=len(targets))
    t0 = time.perf_counter()
    task_json = task.to_json() if task is not None else None
    spec_json = spec.to_json()
    results = []
    if workers <= 1:
        _init_worker(list(sources), spec_json, task_json, out)
        results = [_job(i, t) for i, t in enumerate(targets)]
    else:
        paths = [str(s) if isinstance(s, (str, os.PathLike)) else s for s in sources]
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(paths, spec_json, task_json, out)) as pool:
            futures = [pool.submit(_job, i, t) for i, t in enumerate(targets)]
            results = [f.result() for f in futures]
    for i, payload, dt, err in sorted(results, key=lambda r: r[0]):
        if err is not None:
            log.info("target %d rejected: %s", i, err)
            report.rejected.append({"index": i, "source": targets[i].source,
                                    "target": _plain(targets[i].coords), "reason": err})
            continue
        report.demos.append(payload)
        report.times.append(dt)
    report.total = time.perf_counter() - t0
    if out is not None:
        demo_store.write_manifest(out, report.demos, rejected=report.rejected, spec=spec_json,
                                  timing=report.summary(), **manifest_info)
    return report


def _plain(coords):
    return [list(c) if isinstance(c, tuple) else c for c in coords]
