import numpy as np
import pytest
from hypothesis import given, strategies as st

from nlmcflow.events_io import EventVolume, normalize_window
from nlmcflow.warp import MotionParams, flow_at, flow_from_params, rotation2d, warp_events, warp_points

finite = st.floats(-50, 50, allow_nan=False)


def test_rotation_examples():
    assert np.array_equal(rotation2d(0.0), np.eye(2))
    assert np.allclose(rotation2d(np.pi / 2), [[0, -1], [1, 0]], atol=1e-15)


def test_rotation_inverse(rng):
    for a in rng.uniform(-10, 10, 100):
        assert np.allclose(rotation2d(a) @ rotation2d(-a), np.eye(2), atol=1e-12, rtol=0)
        assert np.isclose(np.linalg.det(rotation2d(a)), 1.0, atol=1e-12)


def _vol(xs, ys, ts):
    n = len(xs)
    return normalize_window(EventVolume.from_arrays(xs, ys, ts, np.ones(n, int), 64, 64, 0, 1000))


def test_zero_motion_is_identity(rng):
    vol = _vol(rng.integers(0, 64, 50), rng.integers(0, 64, 50), rng.integers(0, 1001, 50))
    w = warp_events(vol, MotionParams((0, 0), 0, (31.5, 31.5)), 0.3)
    assert np.array_equal(w.x, vol.x.astype(float)) and np.array_equal(w.y, vol.y.astype(float))
    assert np.array_equal(w.t, vol.t) and np.array_equal(w.p, vol.p) and w.t_ref == 0.3


def test_translation_example():
    # a time step of 0.5 window moves the point by half the velocity
    assert warp_points(10.0, 10.0, 0.5, 2.0, 0.0, 0.0, 0.0, 0.0) == (11.0, 10.0)
    w = warp_events(_vol([10], [10], [0]), MotionParams((2, 0), 0.0), t_ref=0.5)
    assert (w.x[0], w.y[0]) == (11.0, 10.0)


def test_half_turn_about_pivot():
    x, y = warp_points(11.0, 10.0, 1.0, 0.0, 0.0, np.pi, 10.0, 10.0)
    expected = rotation2d(np.pi) @ np.array([1.0, 0.0]) + 10.0
    assert np.allclose((x, y), (9.0, 10.0), atol=1e-9)
    assert np.allclose((x, y), expected, atol=1e-12)


def test_origin_pivot_is_similarity_transform(rng):
    for _ in range(20):
        x, y, t, vx, vy, w = rng.uniform(-5, 5, 6)
        got = warp_points(x, y, t, vx, vy, w, 0.0, 0.0)
        assert np.allclose(got, rotation2d(t * w) @ [x, y] + t * np.array([vx, vy]), atol=1e-12)


@given(finite, finite, st.floats(-1, 1), finite, finite, st.floats(-2, 2), finite, finite)
def test_composition_with_zero_motion(x, y, dt, vx, vy, w, cx, cy):
    xw, yw = warp_points(x, y, dt, vx, vy, w, cx, cy)
    # (x - c) + c may round once
    assert warp_points(xw, yw, dt, 0.0, 0.0, 0.0, cx, cy) == pytest.approx((xw, yw), abs=1e-12)


@given(finite, finite, st.floats(-1, 1), finite, finite)
def test_linear_reduction(x, y, dt, vx, vy):
    assert warp_points(x, y, dt, vx, vy, 0.0, 3.0, 4.0) == pytest.approx((x + dt * vx, y + dt * vy), abs=1e-12)
    assert flow_at(x, y, dt, vx, vy, 0.0, 3.0, 4.0) == (vx, vy)


def test_flow_examples():
    f = flow_from_params(MotionParams((1.5, -2.0), 0.0), 6, 4)
    assert np.all(f.u == 1.5) and np.all(f.v == -2.0) and f.valid.all()
    u, v = flow_at(11.0, 10.0, 0.0, 0.0, 0.0, 0.1, 10.0, 10.0)
    assert np.allclose((u, v), (0.0, 0.1), atol=1e-15)
    h = 1e-5
    p1 = np.array(warp_points(11.0, 10.0, h, 0.0, 0.0, 0.1, 10.0, 10.0))
    p0 = np.array(warp_points(11.0, 10.0, -h, 0.0, 0.0, 0.1, 10.0, 10.0))
    assert np.allclose((p1 - p0) / (2 * h), (u, v), atol=1e-6)


def test_flow_matches_trajectory_derivative(rng):
    h = 1e-5
    for _ in range(1000):
        x, y, cx, cy = rng.uniform(0, 128, 4)
        vx, vy = rng.uniform(-30, 30, 2)
        w = rng.uniform(-1, 1)
        t = rng.uniform(0, 1)
        fd = (np.array(warp_points(x, y, t + h, vx, vy, w, cx, cy))
              - np.array(warp_points(x, y, t - h, vx, vy, w, cx, cy))) / (2 * h)
        an = np.array(flow_at(x, y, t, vx, vy, w, cx, cy))
        assert np.linalg.norm(fd - an) <= 1e-5 * max(np.linalg.norm(an), 1.0)


def test_params_validation():
    with pytest.raises(ValueError):
        MotionParams((np.nan, 0), 0)
    with pytest.raises(ValueError):
        warp_events(EventVolume.empty(4, 4), MotionParams(), 0.0)
    p = MotionParams((1, 2), 0.5, (3, 4))
    assert p.theta.tolist() == [1, 2, 0.5] and p.with_theta([0, 0, 0]).center == (3.0, 4.0)
