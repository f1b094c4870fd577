import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation, Slerp

from demogen.se3 import (Pose, compose, compose_arr, delta_between, interpolate, interpolate_arr, inverse,
                         quat_angle, quat_canonical)

coord = st.floats(-2.0, 2.0, allow_nan=False)
unit = st.floats(-1.0, 1.0, allow_nan=False)


@st.composite
def poses(draw):
    p = [draw(coord) for _ in range(3)]
    q = np.array([draw(unit) for _ in range(4)])
    if np.linalg.norm(q) < 1e-3:
        q = np.array([1.0, 0.0, 0.0, 0.0])
    return Pose(p, quat_canonical(q / np.linalg.norm(q)))


def scipy_matrix(p: Pose):
    m = np.eye(4)
    w, x, y, z = p.quat
    m[:3, :3] = Rotation.from_quat([x, y, z, w]).as_matrix()
    m[:3, 3] = p.position
    return m


def test_identity_left_and_right():
    p = Pose.from_yaw(0.3, (1, 2, 3))
    assert compose(Pose.identity(), p) == p
    assert compose(p, Pose.identity()) == p


def test_translations_add():
    out = compose(Pose.from_translation(1, 0, 0), Pose.from_translation(0, 2, 0))
    np.testing.assert_array_equal(out.position, [1, 2, 0])
    assert out.angle == 0


def test_yaw_then_translate():
    out = compose(Pose.from_yaw(math.pi / 2), Pose.from_translation(1, 0, 0))
    np.testing.assert_allclose(out.position, [0, 1, 0], atol=1e-15)
    assert out.yaw == pytest.approx(math.pi / 2)


@settings(max_examples=300, deadline=None)
@given(poses(), poses())
def test_compose_matches_matrix_product(a, b):
    np.testing.assert_allclose(compose(a, b).as_matrix(), scipy_matrix(a) @ scipy_matrix(b), atol=1e-12)


@settings(max_examples=300, deadline=None)
@given(poses(), poses(), poses())
def test_associative(a, b, c):
    assert compose(compose(a, b), c).allclose(compose(a, compose(b, c)), atol=1e-9)


@settings(max_examples=300, deadline=None)
@given(poses())
def test_inverse_round_trip(a):
    assert compose(a, inverse(a)).allclose(Pose.identity(), atol=1e-9)
    assert compose(inverse(a), a).allclose(Pose.identity(), atol=1e-9)
    np.testing.assert_allclose(inverse(a).as_matrix(), np.linalg.inv(scipy_matrix(a)), atol=1e-12)


def test_inverse_of_translation():
    np.testing.assert_array_equal(inverse(Pose.from_translation(1, 2, 3)).position, [-1, -2, -3])
    assert inverse(Pose.identity()) == Pose.identity()


def test_delta_between_equal_is_exact_identity():
    p = Pose.from_yaw(1.1, (0.4, -0.2, 0.1))
    assert delta_between(p, p).is_identity()


def test_delta_between_pure_translation():
    d = delta_between(Pose.from_translation(0.1, 0, 0), Pose.from_translation(0.3, 0.2, 0))
    np.testing.assert_allclose(d.position, [0.2, 0.2, 0], atol=1e-15)
    assert d.angle == 0


def test_delta_round_trip_many_pairs():
    rng = np.random.default_rng(0)
    q = rng.normal(size=(2, 10_000, 4))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    src = np.concatenate([rng.uniform(-1, 1, (10_000, 3)), quat_canonical(q[0])], axis=1)
    tgt = np.concatenate([rng.uniform(-1, 1, (10_000, 3)), quat_canonical(q[1])], axis=1)
    for s, t in zip(src[:2000], tgt[:2000]):
        d = delta_between(Pose.from_array(s), Pose.from_array(t))
        assert compose(d, Pose.from_array(s)).allclose(Pose.from_array(t), atol=1e-9)
    # vectorised path over the full 10^4 pairs
    from demogen.se3 import inverse_arr
    d = compose_arr(tgt, inverse_arr(src))
    back = compose_arr(d, src)
    assert np.abs(back[:, :3] - tgt[:, :3]).max() < 1e-9
    assert (np.abs(np.sum(back[:, 3:] * tgt[:, 3:], axis=1)) >= 1 - 1e-9).all()


def test_interpolate_endpoints_exact():
    a, b = Pose.from_yaw(0.2, (0, 0, 0)), Pose.from_yaw(1.0, (1, 2, 3))
    assert interpolate(a, b, 0.0) == a
    assert interpolate(a, b, 1.0) == b
    with pytest.raises(ValueError):
        interpolate(a, b, 1.5)


def test_interpolate_midpoints():
    mid = interpolate(Pose.identity(), Pose.from_translation(1, 0, 0), 0.5)
    np.testing.assert_allclose(mid.position, [0.5, 0, 0])
    half = interpolate(Pose.from_yaw(0.0), Pose.from_yaw(math.pi / 2), 0.5)
    assert half.yaw == pytest.approx(math.pi / 4, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(poses(), poses(), st.floats(0.0, 1.0))
def test_slerp_matches_scipy(a, b, t):
    got = interpolate(a, b, t)
    assert abs(np.linalg.norm(got.quat) - 1) < 1e-12
    # half-turn apart, every axis is a shortest path; no unique answer to compare
    assume(quat_angle(a.quat, b.quat) < math.pi - 1e-6)
    ra = Rotation.from_quat(np.roll(a.quat, -1))
    rb = Rotation.from_quat(np.roll(b.quat, -1))
    want = Slerp([0, 1], Rotation.concatenate([ra, rb]))([t])
    assert abs(np.dot(np.roll(want.as_quat()[0], 1), got.quat)) > 1 - 1e-9


@pytest.mark.parametrize("t", [0.0, 0.25, 0.5, 0.9, 1.0])
def test_slerp_half_turn_stays_on_a_geodesic(t):
    a, b = Pose.from_yaw(math.pi), Pose.identity()
    got = interpolate(a, b, t)
    assert abs(quat_angle(a.quat, got.quat) - t * math.pi) < 1e-9
    assert abs(quat_angle(got.quat, b.quat) - (1 - t) * math.pi) < 1e-9


def test_interpolate_arr_agrees_with_scalar():
    a, b = Pose.from_yaw(-0.5, (0, 1, 0)), Pose.from_axis_angle((1, 1, 0), 2.0, (1, 0, 0.5))
    ts = np.linspace(0, 1, 17)
    rows = interpolate_arr(a.as_array(), b.as_array(), ts)
    for t, row in zip(ts, rows):
        assert Pose.from_array(row).allclose(interpolate(a, b, t), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(poses(), poses())
def test_canonical_sign_and_unit_norm(a, b):
    q = compose(a, b).quat
    assert abs(np.linalg.norm(q) - 1) < 1e-9
    assert q[0] > 0 or (q[0] == 0 and q[np.flatnonzero(q)[0]] > 0)


def test_quat_angle_symmetric_in_sign():
    q = Pose.from_yaw(0.7).quat
    assert quat_angle(q, -q) == pytest.approx(0.0, abs=1e-7)


def test_bytes_round_trip():
    p = Pose.from_axis_angle((0.2, 0.3, 0.9), 1.3, (0.1, -2.0, 3.5))
    assert len(p.to_bytes()) == 56
    assert Pose.from_bytes(p.to_bytes()) == p
