import numpy as np

from demogen.demo_store import Demonstration
from demogen.pointcloud import EE
from demogen.se3 import Pose

DOWN = np.array([0.0, 1.0, 0.0, 0.0])


def synthetic_demo(ee_positions, objects, n_obj=20, hand=None, seed=0):
    """Single-arm demo whose ee follows ``ee_positions``; objects are small blobs at ``objects``."""
    rng = np.random.default_rng(seed)
    pos = np.asarray(ee_positions, dtype=np.float64)
    L = len(pos)
    poses = np.concatenate([pos, np.tile(DOWN, (L, 1))], axis=1)[:, None]
    blobs = [np.asarray(c) + rng.normal(0, 0.003, (n_obj, 3)) for c in objects]
    ee_local = rng.normal(0, 0.003, (n_obj, 3))
    pts = np.empty((L, n_obj * (len(objects) + 1), 3))
    for t in range(L):
        pts[t] = np.concatenate(blobs + [ee_local + pos[t]])
    labels = np.concatenate([np.full(n_obj, k) for k in range(len(objects))] + [np.full(n_obj, EE)])
    hand = np.ones((L, 1, 1)) if hand is None else np.asarray(hand, dtype=np.float64).reshape(L, 1, -1)
    return Demonstration(
        points=pts, labels=labels, arm_state=poses, hand_state=hand, arm_action=poses, hand_action=hand,
        init_config=[Pose.from_translation(*c) for c in objects],
        object_names=[f"obj{k}" for k in range(len(objects))], task="synthetic")


def ramp(a, b, n):
    return np.linspace(a, b, n)


def random_target(task, rng, yaw_deg=0.0):
    """Object poses drawn uniformly from the demo range, retried until reachable."""
    while True:
        xy = [(rng.uniform(r[0], r[1]), rng.uniform(r[2], r[3])) for r in task.demo_range]
        yaw = rng.uniform(-yaw_deg, yaw_deg, task.K) if yaw_deg else None
        config = task.config(xy, yaw)
        if task.reachable(config):
            return config
