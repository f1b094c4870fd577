import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demogen.errors import EmptyCloud, MissingDelta
from demogen.pointcloud import (BACKGROUND, EE, CropBox, LabeledCloud, chamfer, cluster_filter, crop, dbscan,
                                farthest_point_sample, fps_indices, mean_spacing, pad_cyclic, preprocess,
                                read_ply, subtract_by_proximity, transform_labeled, write_ply)
from demogen.se3 import Pose
from oracles import brute_dbscan, brute_fps, partition


def cloud(n=50, seed=0, labels=None):
    rng = np.random.default_rng(seed)
    return LabeledCloud(rng.uniform(-1, 1, (n, 3)), np.zeros(n) if labels is None else labels)


def test_crop_keeps_inside_points():
    c = cloud(400, 1)
    box = CropBox((-0.5, -0.5, -0.5), (0.5, 0.6, 0.7))
    out = crop(c, box)
    lo, hi = np.array(box.lo), np.array(box.hi)
    want = [p for p in c.points if np.all(p >= lo) and np.all(p <= hi)]
    np.testing.assert_array_equal(out.points, np.array(want, dtype=np.float32))
    np.testing.assert_array_equal(crop(out, box).points, out.points)


def test_crop_drops_far_point_and_rejects_empty():
    c = LabeledCloud([[0.1, 0.1, 0.1], [10, 10, 10]], [0, 1])
    out = crop(c, CropBox((-1, -1, -1), (1, 1, 1)))
    assert len(out) == 1 and out.labels[0] == 0
    with pytest.raises(EmptyCloud):
        crop(c, CropBox((5, 5, 5), (6, 6, 6)))
    with pytest.raises(ValueError):
        CropBox((0, 0, 0), (0, 1, 1))


def test_dbscan_two_blobs_kept():
    rng = np.random.default_rng(3)
    a = rng.normal(0, 0.01, (100, 3))
    b = rng.normal(0, 0.01, (100, 3)) + [1, 0, 0]
    c = LabeledCloud(np.concatenate([a, b]), np.zeros(200))
    labels = dbscan(c.points, 0.05, 5)
    assert (labels >= 0).all() and len(set(labels.tolist())) == 2
    assert len(cluster_filter(c, 0.05, 5)) == 200


def test_dbscan_isolated_point_removed():
    rng = np.random.default_rng(4)
    pts = np.concatenate([rng.normal(0, 0.005, (80, 3)), [[0.5, 0.5, 0.5]]])
    out = cluster_filter(LabeledCloud(pts, np.zeros(81)), 0.02, 5)
    assert len(out) == 80 and not np.any(np.all(out.points == np.float32(0.5), axis=1))


def test_dbscan_min_pts_one_keeps_everything():
    c = cloud(60, 5)
    assert (dbscan(c.points, 1e-4, 1) >= 0).all()
    with pytest.raises(EmptyCloud):
        cluster_filter(c, 1e-4, 2)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(10, 300), st.floats(0.05, 0.4), st.integers(1, 8))
def test_dbscan_matches_reference(seed, n, eps, min_pts):
    pts = np.random.default_rng(seed).uniform(-1, 1, (n, 3)).astype(np.float32).astype(np.float64)
    got, want = dbscan(pts, eps, min_pts), brute_dbscan(pts, eps, min_pts)
    assert set(np.flatnonzero(got < 0)) == set(np.flatnonzero(want < 0))
    assert partition(got) == partition(want)


def test_fps_square_corners():
    sq = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=np.float32)
    out = farthest_point_sample(LabeledCloud(sq, np.arange(4)), 2)
    assert {tuple(p) for p in out.points.tolist()} == {(0, 0, 0), (1, 1, 0)}


def test_fps_k_equals_n_is_permutation():
    c = cloud(30, 6)
    idx = fps_indices(c.points, 30)
    assert sorted(idx.tolist()) == list(range(30))


def test_fps_greedy_on_1000_points():
    c = cloud(1000, 7)
    assert fps_indices(c.points, 512).tolist() == brute_fps(c.points, 512)


def test_fps_k_above_n_cycles():
    c = cloud(5, 8)
    idx = fps_indices(c.points, 12)
    assert len(idx) == 12 and idx[:5].tolist() == idx[5:10].tolist()
    with pytest.raises(ValueError):
        fps_indices(c.points, 0)


def test_transform_identity_keeps_bits():
    c = cloud(40, 9, labels=np.r_[np.zeros(20), np.full(20, EE)])
    out = transform_labeled(c, {0: Pose.identity()}, Pose.identity())
    assert out.points.tobytes() == c.points.tobytes()


def test_transform_moves_only_its_label():
    c = cloud(40, 10, labels=np.r_[np.zeros(20), np.ones(10), np.full(10, BACKGROUND)])
    out = transform_labeled(c, {0: Pose.from_translation(0.2, 0, 0), 1: Pose.identity()}, Pose.identity())
    np.testing.assert_allclose(out.points[:20] - c.points[:20], np.tile([0.2, 0, 0], (20, 1)), atol=1e-6)
    np.testing.assert_array_equal(out.points[20:], c.points[20:])
    with pytest.raises(MissingDelta):
        transform_labeled(c, {0: Pose.identity()}, Pose.identity())


def test_transform_matches_matrix_oracle_and_is_rigid():
    labels = np.r_[np.zeros(30), np.ones(30), np.full(30, EE)]
    c = cloud(90, 11, labels=labels)
    deltas = {0: Pose.from_axis_angle((1, 2, 3), 0.7, (0.1, 0, 0.3)), 1: Pose.from_yaw(-1.2, (0, 0.5, 0))}
    ee = Pose.from_axis_angle((0, 1, 0), 0.4, (-0.2, 0, 0))
    out = transform_labeled(c, deltas, ee)
    for lab, pose in [(0, deltas[0]), (1, deltas[1]), (EE, ee)]:
        m = labels == lab
        homo = np.c_[c.points[m].astype(np.float64), np.ones(m.sum())]
        want = (pose.as_matrix() @ homo.T).T[:, :3]
        np.testing.assert_allclose(out.points[m], want, atol=1e-6)
        d0 = np.linalg.norm(c.points[m][:, None] - c.points[m][None], axis=-1)
        d1 = np.linalg.norm(out.points[m][:, None] - out.points[m][None], axis=-1)
        assert np.abs(d0 - d1).max() < 1e-5


def test_chamfer_basics():
    a = cloud(50, 12)
    assert chamfer(a, a) == 0
    assert chamfer(np.zeros((1, 3)), np.array([[1.0, 0, 0]])) == 1.0
    with pytest.raises(EmptyCloud):
        chamfer(np.zeros((0, 3)), a)


def test_chamfer_matches_brute_force_and_is_symmetric():
    a, b = cloud(120, 13).points, cloud(90, 14).points + np.float32(0.05)
    d = np.linalg.norm(a[:, None].astype(float) - b[None].astype(float), axis=-1)
    want = 0.5 * (d.min(1).mean() + d.min(0).mean())
    assert chamfer(a, b) == pytest.approx(want, rel=1e-12)
    assert chamfer(b, a) == pytest.approx(chamfer(a, b), rel=1e-12)


def test_subtract_by_proximity():
    scene = cloud(200, 15)
    assert len(subtract_by_proximity(scene, LabeledCloud.empty(), 0.005)) == 200
    assert len(subtract_by_proximity(scene, scene, 0.001)) == 0
    ref = scene.subset(np.arange(100))
    ref = LabeledCloud(ref.points + np.float32(0.01), ref.labels)
    out = subtract_by_proximity(scene, ref, 0.03)
    d = np.linalg.norm(scene.points[:, None].astype(float) - ref.points[None].astype(float), axis=-1).min(1)
    np.testing.assert_array_equal(out.points, scene.points[d > 0.03])
    with pytest.raises(ValueError):
        subtract_by_proximity(scene, ref, 0.0)


def test_preprocess_fixed_size_and_no_background():
    rng = np.random.default_rng(16)
    pts = np.concatenate([rng.normal(0, 0.01, (300, 3)), rng.uniform(-1, 1, (50, 3))])
    labels = np.r_[np.zeros(300), np.full(50, BACKGROUND)]
    out = preprocess(LabeledCloud(pts, labels), None, 128)
    assert len(out) == 128 and not (out.labels == BACKGROUND).any()
    small = preprocess(LabeledCloud(pts[:40], labels[:40]), None, 128, cluster=False)
    assert len(small) == 128
    np.testing.assert_array_equal(small.points[40:80], small.points[:40])


def test_pad_cyclic():
    c = cloud(3, 17)
    out = pad_cyclic(c, 7)
    np.testing.assert_array_equal(out.points, c.points[[0, 1, 2, 0, 1, 2, 0]])
    with pytest.raises(EmptyCloud):
        pad_cyclic(LabeledCloud.empty(), 4)


def test_ply_round_trip(tmp_path):
    c = cloud(25, 18, labels=np.arange(25) % 3 - 1)
    write_ply(c, tmp_path / "c.ply")
    back = read_ply(tmp_path / "c.ply")
    assert back.points.tobytes() == c.points.tobytes()
    np.testing.assert_array_equal(back.labels, c.labels)


def test_mean_spacing_of_lattice():
    g = np.stack(np.meshgrid(np.arange(5), np.arange(5), [0.0]), -1).reshape(-1, 3) * 0.01
    assert mean_spacing(g) == pytest.approx(0.01)
