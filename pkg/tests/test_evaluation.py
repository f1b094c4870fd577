import numpy as np
import pytest

from conftest import source
from demogen.errors import EmptyDataset
from demogen.evaluation import (HEADER, Heatmap, NNReplayPolicy, SweepPoint, eval_cell, eval_grid, grid_eval,
                                heatmap_export, heatmap_ppm, heatmap_read, marginal_gains, mismatch_curve)
from demogen.pipeline import Generator
from demogen.sim import load_task


@pytest.fixture(scope="module")
def cube_pair():
    task = load_task("pick_cube")
    gen = Generator(source("pick_cube"), task=task)
    r = task.demo_range[0]
    near, far = gen.generate([(r[0] + 0.02, r[2] + 0.02)]), gen.generate([(r[1] - 0.02, r[3] - 0.02)])
    return task, near, far


def test_nn_selects_matching_demo(cube_pair):
    task, near, far = cube_pair
    policy = NNReplayPolicy([near, far])
    assert policy.select(near.points[0]) == 0
    assert policy.select(far.cloud(0)) == 1
    d = policy.distances(far.points[0])
    assert d[1] == 0 and d[0] > 0
    with pytest.raises(EmptyDataset):
        NNReplayPolicy([])


def test_eval_cell_outcomes(cube_pair):
    task, near, far = cube_pair
    policy = NNReplayPolicy([near, far])
    xy = tuple(near.init_config[0].position[:2])
    assert eval_cell(policy, task, xy, [0, 1]) == 1.0
    assert eval_cell(policy, task, (5.0, 5.0), [0]) == 0.0


def test_grid_eval_deterministic_and_out_of_reach(cube_pair):
    task, near, far = cube_pair
    policy = NNReplayPolicy([near, far])
    grid = [tuple(near.init_config[0].position[:2]), tuple(far.init_config[0].position[:2]), (9.0, 9.0)]
    a = grid_eval(policy, task, grid, trials_per_cell=2)
    b = grid_eval(policy, task, grid, trials_per_cell=2)
    np.testing.assert_array_equal(a.rate, b.rate)
    assert a.rate.tolist() == [1.0, 1.0, 0.0]
    assert a.trials.tolist() == [2, 2, 2]


def test_eval_grid_shapes():
    task = load_task("pick_cube")
    assert len(eval_grid(task, samples=11)) == 121
    multi = eval_grid(load_task("two_object_insert"), samples=3)
    assert len(multi) == 9 and len(multi[0]) == 2


def test_heatmap_csv_round_trip(tmp_path):
    h = Heatmap([(0.1, 0.2), (0.3, 0.2), (0.1, 0.4)], [1.0, 0.4, 0.0], [5, 5, 5])
    heatmap_export(h, tmp_path / "h.csv")
    back = heatmap_read(tmp_path / "h.csv")
    np.testing.assert_array_equal(back.cells, h.cells)
    np.testing.assert_array_equal(back.rate, h.rate)
    assert back.region() == {0} and h.dominates(Heatmap(h.cells, [0.5, 0.4, 0.0], [5, 5, 5]))
    empty = Heatmap(np.zeros((0, 2)), [], [])
    heatmap_export(empty, tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().strip() == ",".join(HEADER)
    assert len(heatmap_read(tmp_path / "e.csv")) == 0
    (tmp_path / "bad.csv").write_text("a,b\n")
    with pytest.raises(ValueError):
        heatmap_read(tmp_path / "bad.csv")
    with pytest.raises(ValueError):
        Heatmap([(0, 0)], [1.5], [1])


def test_heatmap_ppm(tmp_path):
    h = Heatmap([(0, 0), (1, 0), (0, 1), (1, 1)], [0.0, 1.0, 1.0, 0.0], [1, 1, 1, 1])
    heatmap_ppm(h, tmp_path / "h.ppm", scale=2)
    raw = (tmp_path / "h.ppm").read_bytes()
    header = b"P6 4 4 255\n"
    assert raw.startswith(header) and len(raw) == len(header) + 4 * 4 * 3
    img = np.frombuffer(raw[len(header):], np.uint8).reshape(4, 4, 3)
    assert img[3, 0].tolist() == [255, 0, 0]  # (0, 0) bottom left, failed
    assert img[0, 0].tolist() == [0, 255, 0]  # (0, 1) top left, succeeded


def test_mismatch_curve_without_visibility_is_exact():
    task = load_task("pick_cube")
    curve = mismatch_curve(task, task.default_config(), [(0.02 * i, 0.0) for i in range(4)], visibility=False,
                           n_points=256)
    assert curve.chamfer.max() < 1e-6 < curve.resolution


def test_mismatch_curve_grows_with_distance():
    task = load_task("button_large")
    disp = [(0.015 * i, 0.01 * i) for i in range(8)]
    curve = mismatch_curve(task, task.default_config(), disp, n_points=256)
    assert curve.chamfer[0] == 0.0
    assert curve.spearman > 0.8


def test_marginal_gains():
    pts = [SweepPoint(0, 1, 0.1), SweepPoint(0.5, 10, 0.6), SweepPoint(1, 20, 0.7)]
    np.testing.assert_allclose(marginal_gains(pts), [0.5, 0.1])
