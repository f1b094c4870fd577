"""Spatial generalization grids, heatmaps, visual mismatch curves and saturation sweeps."""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import spearmanr

from .augment import GenerationSpec, grid_targets
from .demo_store import Demonstration
from .errors import EmptyDataset
from .pipeline import generate_dataset
from .pointcloud import chamfer, mean_spacing, transform_labeled
from .se3 import Pose
from .sim.render import Renderer
from .sim.tasks import TaskSpec
from .sim.world import World, execute_plan

TRIALS = 5
HEADER = ("x", "y", "success_rate", "trials")


class NNReplayPolicy:
    """Replays the stored demo whose frame-0 cloud is closest in chamfer distance.

    It has no ability to interpolate between demonstrations, which makes the
    effect of spatial coverage plain to see.
    """

    def __init__(self, dataset: Sequence[Demonstration]):
        dataset = list(dataset)
        if not dataset:
            raise EmptyDataset("nn replay needs at least one demonstration")
        self.demos = dataset
        self._clouds = [np.asarray(d.points[0], dtype=np.float64) for d in dataset]
        self._trees = [cKDTree(c) for c in self._clouds]

    def __len__(self):
        return len(self.demos)

    def distances(self, observed) -> np.ndarray:
        obs = np.asarray(getattr(observed, "points", observed), dtype=np.float64)
        t_obs = cKDTree(obs)
        out = np.empty(len(self.demos))
        for i, (c, t) in enumerate(zip(self._clouds, self._trees)):
            out[i] = 0.5 * (t.query(obs)[0].mean() + t_obs.query(c)[0].mean())
        return out

    def select(self, observed) -> int:
        return int(np.argmin(self.distances(observed)))

    def act(self, observed) -> Demonstration:
        return self.demos[self.select(observed)]


def nn_replay_policy(dataset) -> NNReplayPolicy:
    return NNReplayPolicy(dataset)


@dataclass
class Heatmap:
    cells: np.ndarray  # (C, 2) xy of the first object
    rate: np.ndarray  # (C,)
    trials: np.ndarray  # (C,)

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.float64).reshape(-1, 2)
        self.rate = np.asarray(self.rate, dtype=np.float64)
        self.trials = np.asarray(self.trials, dtype=np.int64)
        if len(self.rate) and (self.rate.min() < 0 or self.rate.max() > 1):
            raise ValueError("success rates must lie in [0, 1]")
        if len(self.trials) and self.trials.min() < 1:
            raise ValueError("every cell needs at least one trial")

    def __len__(self):
        return len(self.rate)

    def region(self, threshold: float = 0.5) -> set:
        """Indices of cells whose success rate reaches ``threshold``."""
        return set(np.flatnonzero(self.rate >= threshold).tolist())

    @property
    def mean(self) -> float:
        return float(self.rate.mean()) if len(self.rate) else 0.0

    def dominates(self, other: "Heatmap") -> bool:
        return bool(np.all(self.rate >= other.rate))


def _observe(task: TaskSpec, renderer: Renderer, config, seed) -> np.ndarray:
    state = World(task, config).state
    return renderer.render(state, seed).points


def _cell_rows(task: TaskSpec, cell) -> list:
    nested = isinstance(cell[0], (list, tuple, np.ndarray))
    if not nested and task.K != 1:
        raise ValueError(f"{task.name} has {task.K} objects; a cell needs per-object coordinates")
    return [np.asarray(r, dtype=np.float64) for r in (cell if nested else [cell])]


def _cell_config(task: TaskSpec, cell):
    rows = _cell_rows(task, cell)
    yaw = [r[2] if len(r) > 2 else 0.0 for r in rows]
    return task.config([r[:2] for r in rows], yaw)


def eval_cell(policy: NNReplayPolicy, task: TaskSpec, cell, seeds: Sequence[int],
              renderer: Optional[Renderer] = None) -> float:
    """Success fraction over ``seeds`` (one observation noise seed per trial)."""
    config = _cell_config(task, cell)
    if not task.reachable(config):
        return 0.0
    renderer = renderer or Renderer(task, policy.demos[0].N, camera=policy.demos[0].camera)
    wins = 0
    for seed in seeds:
        demo = policy.act(_observe(task, renderer, config, seed))
        wins += execute_plan(task, config, (demo.arm_action, demo.hand_action), ee=demo.arm_state[0],
                             hand=demo.hand_state[0], disturbances=[]).success
    return wins / len(seeds)


_E: dict = {}


def _init_eval(dataset, task_json):
    task = TaskSpec.from_json(task_json)
    policy = NNReplayPolicy(dataset)
    _E.update(task=task, policy=policy, renderer=Renderer(task, dataset[0].N, camera=dataset[0].camera))


def _eval_job(cell, seeds):
    return eval_cell(_E["policy"], _E["task"], cell, seeds, _E["renderer"])


def grid_eval(policy: NNReplayPolicy, task: TaskSpec, grid, trials_per_cell: int = TRIALS,
              seeds: Optional[Sequence[int]] = None, workers: int = 1) -> Heatmap:
    """Heatmap of ``policy`` over ``grid``; unreachable cells score 0."""
    seeds = list(range(trials_per_cell)) if seeds is None else list(seeds)
    if not seeds:
        raise ValueError("at least one trial per cell")
    grid = list(grid)
    if workers <= 1:
        renderer = Renderer(task, policy.demos[0].N, camera=policy.demos[0].camera)
        rates = [eval_cell(policy, task, c, seeds, renderer) for c in grid]
    else:
        with ProcessPoolExecutor(workers, initializer=_init_eval, initargs=(policy.demos, task.to_json())) as pool:
            rates = list(pool.map(_eval_job, grid, [seeds] * len(grid)))
    xy = [_cell_rows(task, c)[0][:2] for c in grid]
    return Heatmap(np.array(xy).reshape(-1, 2), rates, np.full(len(grid), len(seeds)))


def eval_grid(task: TaskSpec, samples: int = 11, spacing=None) -> list:
    """Lattice over the first object's eval range; other objects sit at their range centres."""
    r = task.eval_range[0]
    cells = grid_targets([(r[0], r[2]), (r[1], r[2]), (r[1], r[3]), (r[0], r[3])], spacing,
                         None if spacing is not None else samples)
    if task.K == 1:
        return cells
    rest = [((q[0] + q[1]) / 2, (q[2] + q[3]) / 2) for q in task.eval_range[1:]]
    return [(c, *rest) for c in cells]


# -- files ----------------------------------------------------------------------------


def heatmap_export(h: Heatmap, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(HEADER)
        for (x, y), r, n in zip(h.cells, h.rate, h.trials):
            w.writerow((repr(float(x)), repr(float(y)), repr(float(r)), int(n)))


def heatmap_read(path) -> Heatmap:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows or tuple(rows[0]) != HEADER:
        raise ValueError(f"{path}: expected header {','.join(HEADER)}")
    body = rows[1:]
    return Heatmap([(float(r[0]), float(r[1])) for r in body], [float(r[2]) for r in body],
                   [int(r[3]) for r in body])


def heatmap_ppm(h: Heatmap, path, scale: int = 16) -> None:
    """Red-to-green raster, one block per cell, y increasing upward."""
    xs, ys = np.unique(h.cells[:, 0]), np.unique(h.cells[:, 1])
    img = np.zeros((len(ys) * scale, len(xs) * scale, 3), dtype=np.uint8)
    for (x, y), r in zip(h.cells, h.rate):
        i = len(ys) - 1 - int(np.searchsorted(ys, y))
        j = int(np.searchsorted(xs, x))
        img[i * scale:(i + 1) * scale, j * scale:(j + 1) * scale] = (int(255 * (1 - r)), int(255 * r), 0)
    with open(path, "wb") as f:
        f.write(f"P6 {img.shape[1]} {img.shape[0]} 255\n".encode())
        f.write(img.tobytes())


# -- visual mismatch --------------------------------------------------------------------


@dataclass
class MismatchCurve:
    displacement: np.ndarray  # metres
    chamfer: np.ndarray
    resolution: float  # mean nearest-neighbour spacing of the fresh renders

    @property
    def spearman(self) -> float:
        if len(self.displacement) < 2:
            return float("nan")
        return float(spearmanr(self.displacement, self.chamfer).correlation)


def mismatch_curve(task: TaskSpec, config, displacements, visibility: bool = True, object_id: int = 0,
                   n_points: Optional[int] = None, noise_seed: Optional[int] = None) -> MismatchCurve:
    """Chamfer between a rigidly edited frame-0 view and a fresh view of the displaced scene."""
    renderer = Renderer(task, n_points, visibility)
    config = list(config)
    base = World(task, config).state
    src = renderer.render(base, noise_seed)
    dists, cham, res = [], [], []
    for d in displacements:
        delta = d if isinstance(d, Pose) else Pose.from_translation(tuple(d) + (0.0,) * (3 - len(d)))
        deltas = {k: (delta if k == object_id else Pose.identity()) for k in range(task.K)}
        edited = transform_labeled(src, deltas, Pose.identity())
        moved = list(config)
        moved[object_id] = delta @ config[object_id]
        fresh = renderer.render(World(task, moved).state, noise_seed)
        dists.append(float(np.linalg.norm(delta.position)))
        cham.append(chamfer(edited, fresh))
        res.append(mean_spacing(fresh.points))
    return MismatchCurve(np.array(dists), np.array(cham), float(np.mean(res)))


# -- saturation ---------------------------------------------------------------------


@dataclass
class SweepPoint:
    level: float
    demos: int
    success: float


def _range_cells(rng, scale, spacing):
    cx, cy = (rng[0] + rng[1]) / 2, (rng[2] + rng[3]) / 2
    hx, hy = (rng[1] - rng[0]) / 2 * scale, (rng[3] - rng[2]) / 2 * scale
    return grid_targets([(cx - hx, cy - hy), (cx + hx, cy - hy), (cx + hx, cy + hy), (cx - hx, cy + hy)], spacing)


def saturation_sweep(task: TaskSpec, sources: Sequence[Demonstration], levels: Sequence[float],
                     mode: str = "coverage", spacing: float = 0.03, coverage: float = 1.0, grid=None,
                     trials_per_cell: int = 1, path=None, workers: int = 1) -> List[SweepPoint]:
    """Success of nn replay as the generated dataset grows.

    ``coverage`` mode scales the generation area about the centre of the demo
    range at fixed ``spacing``; ``density`` mode fixes ``coverage`` and uses
    each level as the lattice spacing in metres.
    """
    if list(levels) != sorted(levels) and mode == "coverage":
        raise ValueError("coverage levels must be sorted")
    if mode not in ("coverage", "density"):
        raise ValueError(f"unknown sweep mode {mode!r}")
    grid = eval_grid(task) if grid is None else grid
    rest = [((q[0] + q[1]) / 2, (q[2] + q[3]) / 2) for q in task.demo_range[1:]]
    out = []
    for level in levels:
        scale, step = (level, spacing) if mode == "coverage" else (coverage, level)
        cells = _range_cells(task.demo_range[0], scale, step) if scale > 0 else []
        targets = cells if task.K == 1 else [(c, *rest) for c in cells]
        demos = list(sources)
        if targets:
            spec = GenerationSpec(eval_grid=[_tup(t) for t in targets])
            demos += generate_dataset(list(sources), spec, task=task, workers=workers).demos
        h = grid_eval(NNReplayPolicy(demos), task, grid, trials_per_cell)
        out.append(SweepPoint(float(level), len(demos), h.mean))
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(("level", "demos", "success_rate"))
            for p in out:
                w.writerow((p.level, p.demos, p.success))
    return out


def _tup(t):
    return tuple(tuple(c) for c in t) if isinstance(t[0], tuple) else tuple(t)


def marginal_gains(points: Sequence[SweepPoint]) -> np.ndarray:
    s = np.array([p.success for p in points])
    return np.diff(s)
