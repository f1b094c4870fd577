import json

import numpy as np
import pytest

from conftest import TASKS, source
from demogen.pointcloud import EE
from demogen.se3 import Pose
from demogen.shapes import Primitive
from demogen.sim import (CAMERA_BIRDSEYE, ObjectSpec, Renderer, TaskSpec, World, execute_plan, load_task,
                         scripted_demo, task_names, write_trace)
from demogen.sim.render import NOISE_SIGMA, empty_scene
from helpers import random_target


def test_builtin_task_names():
    assert set(TASKS) <= set(task_names())


@pytest.mark.parametrize("name", TASKS)
def test_source_replays_successfully(name):
    task, demo = load_task(name), source(name)
    assert execute_plan(task, demo.init_config, demo).success


@pytest.mark.parametrize("name", TASKS)
def test_scripted_policy_succeeds_across_demo_range(name):
    task = load_task(name)
    rng = np.random.default_rng(7)
    for _ in range(4):
        config = random_target(task, rng)
        demo = scripted_demo(task, config, noise_seed=None, n_points=64)
        assert execute_plan(task, config, demo).success


def test_idle_plan_fails():
    task = load_task("pick_cube")
    demo = source("pick_cube")
    idle = (np.repeat(demo.arm_action[:1], 30, axis=0), np.repeat(demo.hand_action[:1], 30, axis=0))
    assert not execute_plan(task, demo.init_config, idle).success


def test_noise_changes_points_not_actions():
    task = load_task("pick_cube")
    a = scripted_demo(task, noise_seed=1, n_points=128)
    b = scripted_demo(task, noise_seed=2, n_points=128)
    clean = scripted_demo(task, noise_seed=None, n_points=128)
    np.testing.assert_array_equal(a.arm_action, b.arm_action)
    assert not np.array_equal(a.points, b.points)
    jitter = np.abs(a.points.astype(np.float64) - clean.points.astype(np.float64))
    assert jitter.max() <= 3 * NOISE_SIGMA + 1e-6
    again = scripted_demo(task, noise_seed=1, n_points=128)
    assert again.points.tobytes() == a.points.tobytes()


def sphere_task():
    ball = ObjectSpec("ball", [Primitive("sphere", (0.05,), Pose.from_translation(0, 0, 0.05))], graspable=False)
    return TaskSpec("ball", "press", [ball], {"id": "press", "params": {}}, [(0, -1), (1, -1), (1, 1), (0, 1)],
                    [[0.4, 0.6, -0.1, 0.1]], [[0.4, 0.6, -0.1, 0.1]], camera=CAMERA_BIRDSEYE, n_points=256)


def test_visibility_keeps_camera_facing_hemisphere():
    task = sphere_task()
    world = World(task, [Pose.from_translation(0.5, 0, 0)], ee=[Pose.from_translation(0.5, 0.0, 5.0).as_array()])
    cloud = Renderer(task, visibility=True).render(world.state)
    ball = cloud.points[cloud.labels == 0].astype(np.float64)
    centre = np.array([0.5, 0, 0.05])
    to_cam = task.camera.position - centre
    to_cam /= np.linalg.norm(to_cam)
    assert np.all((ball - centre) @ to_cam > -0.01)
    hidden = Renderer(task, visibility=False).render(world.state)
    assert ((hidden.points[hidden.labels == 0] - centre) @ to_cam < -0.02).any()


def test_render_point_budget_and_labels():
    task = load_task("two_object_insert")
    r = Renderer(task, 300)
    cloud = r.render(World(task, task.default_config()).state)
    assert len(cloud) == 300
    assert set(cloud.labels.tolist()) == {0, 1, EE}


def test_empty_scene_renders_end_effector_only():
    task = empty_scene(load_task("pick_cube"))
    cloud = Renderer(task, 64).render(World(task, []).state)
    assert len(cloud) == 64 and (cloud.labels == EE).all()


@pytest.mark.parametrize("name", TASKS)
def test_task_json_round_trip(tmp_path, name):
    task = load_task(name)
    path = tmp_path / "t.json"
    path.write_text(json.dumps(task.to_json()))
    back = load_task(path)
    assert back.to_json() == task.to_json()


def test_task_rejects_bad_ranges_and_keys():
    d = load_task("pick_cube").to_json()
    with pytest.raises(ValueError):
        TaskSpec.from_json({**d, "colour": "red"})
    wide = dict(d, eval_range=[[r[0] - 1, r[1], r[2], r[3]] for r in d["demo_range"]])
    with pytest.raises(ValueError):
        TaskSpec.from_json(wide)


def test_disturbance_moves_resting_object_only():
    task = load_task("pick_cube")
    world = World(task, task.default_config())
    before = world.state.objects[0].copy()
    world.disturb(0, Pose.from_translation(0.02, 0, 0))
    np.testing.assert_allclose(world.state.objects[0][:3] - before[:3], [0.02, 0, 0])


def test_trace_csv(tmp_path):
    task, demo = load_task("pick_cube"), source("pick_cube")
    out = execute_plan(task, demo.init_config, demo)
    write_trace(out.trace, tmp_path / "trace.csv")
    rows = (tmp_path / "trace.csv").read_text().splitlines()
    assert len(rows) == demo.L + 2 and rows[0].startswith("frame,ee0_x")
    with pytest.raises(ValueError):
        write_trace([], tmp_path / "empty.csv")
