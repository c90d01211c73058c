import numpy as np
import pytest

from conftest import random_volume
from nlmcflow.events_io import EventVolume, normalize_window
from nlmcflow.loss import (LossConfig, Objective, build_iwe, loss_at, loss_ec, loss_gradient, loss_nlmc,
                           loss_smooth, loss_smooth_grad)
from nlmcflow.synth_eval import SceneSpec, synth_scene
from nlmcflow.tiles import TileGrid
from nlmcflow.warp import MotionParams

ZERO = MotionParams()


def _norm(xs, ys, ts, ps, w=16, h=16, t1=1000):
    return normalize_window(EventVolume.from_arrays(xs, ys, ts, ps, w, h, 0, t1))


def test_config_defaults_and_validation():
    c = LossConfig()
    assert (c.alpha, c.lambda1, c.lambda2, c.epsilon, c.t_ref_fw, c.t_ref_bw) == (0.6, 1.0, 0.001, 1e-9, 1.0, 0.0)
    for bad in (dict(alpha=0), dict(lambda1=-1), dict(epsilon=0), dict(t_ref_fw=1.5), dict(timestamps="x")):
        with pytest.raises(ValueError):
            LossConfig(**bad)


def test_empty_volume():
    vol = normalize_window(EventVolume.empty(8, 6))
    assert loss_at(vol, ZERO, 1.0) == 0.0
    assert loss_ec(vol, ZERO, 0.0) == 2.0
    b = loss_nlmc(vol, ZERO)
    assert b.total == 4.0 and b.l_smooth == 0.0


def test_zero_timestamps_give_zero_at(rng):
    n = 40
    vol = normalize_window(EventVolume.from_arrays(rng.integers(0, 16, n), rng.integers(0, 16, n), np.zeros(n, int),
                                                   rng.choice([-1, 1], n), 16, 16, 0, 1000))
    theta = MotionParams((3.3, -1.2), 0.4, (8, 8))
    for t_ref in (0.0, 0.4, 1.0):
        assert loss_at(vol, theta, t_ref, LossConfig(timestamps="raw")) == 0.0
    # relative weights coincide with raw ones at the window end
    assert loss_at(vol, theta, 1.0) == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_compensation_lowers_at(seed):
    spec = SceneSpec(pattern="edge", vx=10, vy=3, density=60, seed=seed)
    vol = normalize_window(synth_scene(spec)[0])
    for t_ref in (0.0, 1.0):
        assert loss_at(vol, spec.motion, t_ref) < loss_at(vol, spec.motion.with_theta([0, 0, 0]), t_ref)


def test_ec_rewards_concentrated_mass():
    n = 20
    stacked = _norm(np.full(n, 5), np.full(n, 5), np.arange(n), np.ones(n, int))
    spread = _norm(np.arange(n) % 16, np.arange(n) // 16, np.arange(n), np.ones(n, int))
    # brute force over the 256 pixels; the negative polarity image is all ones
    e_stacked = 255 + np.exp(-0.6 * 20)
    e_spread = 236 + 20 * np.exp(-0.6)
    assert loss_ec(stacked, ZERO, 1.0) == pytest.approx(256 / e_stacked + 1.0, rel=1e-12)
    assert loss_ec(spread, ZERO, 1.0) == pytest.approx(256 / e_spread + 1.0, rel=1e-12)
    # stacking the mass keeps more pixels unsaturated, so the sharp image scores lower
    assert loss_ec(stacked, ZERO, 1.0) < loss_ec(spread, ZERO, 1.0)


def test_at_brute_force():
    # two + events on one pixel (t=0.2, 0.6) and one - event elsewhere (t=0.5), no warp, t_ref=1
    vol = _norm([1, 1, 4], [2, 2, 0], [200, 600, 500], [1, 1, -1], 8, 4)
    expected = ((0.8 / (2 + 1e-9)) ** 2 + (0.5 / (1 + 1e-9)) ** 2) / (2 + 1e-9)
    assert loss_at(vol, ZERO, 1.0) == pytest.approx(expected, rel=1e-12)


def test_smooth_examples():
    g = TileGrid.create(64, 64, 3, 2, theta=np.tile([1.0, 2.0, 0.1], (2, 3, 1)))
    assert loss_smooth(g) == 0.0
    assert loss_smooth(TileGrid.create(8, 8)) == 0.0
    two = TileGrid.create(64, 32, 2, 1, theta=[[[0, 0, 0], [1, 0, 0]]])
    assert loss_smooth(two, 1e-3) == pytest.approx(np.sqrt(1 + 1e-6) - 1e-3, abs=1e-15)
    # omega differences count at the tile diagonal
    rot = TileGrid.create(64, 32, 2, 1, theta=[[[0, 0, 0], [0, 0, 0.1]]])
    assert loss_smooth(rot) == pytest.approx(np.hypot(0.1 * np.hypot(32, 32), 1e-3) - 1e-3)


def test_smooth_decreases_when_blending(rng):
    theta = rng.normal(0, 5, (3, 4, 3))
    mean = theta.mean(axis=(0, 1))
    vals = [loss_smooth(TileGrid.create(128, 96, 4, 3, theta=mean + s * (theta - mean))) for s in np.linspace(1, 0, 11)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_smooth_gradient_matches_fd(rng):
    g = TileGrid.create(96, 96, 3, 3, theta=rng.normal(0, 2, (3, 3, 3)))
    an = loss_smooth_grad(g)
    h = 1e-6
    for idx in np.ndindex(g.theta.shape):
        tp, tm = g.theta.copy(), g.theta.copy()
        tp[idx] += h
        tm[idx] -= h
        fd = (loss_smooth(g.with_theta(tp)) - loss_smooth(g.with_theta(tm))) / (2 * h)
        assert fd == pytest.approx(an[idx], rel=1e-5, abs=1e-6)


def test_breakdown_invariant(rng):
    vol = random_volume(rng, 400)
    cfg = LossConfig(lambda1=0.7, lambda2=0.3)
    grid = TileGrid.create(32, 24, 2, 2, theta=rng.normal(0, 3, (2, 2, 3)) * [1, 1, 0.1])
    b = loss_nlmc(vol, grid, cfg)
    assert b.total == pytest.approx(b.l_at_fw + b.l_at_bw + 0.7 * (b.l_ec_fw + b.l_ec_bw) + 0.3 * b.l_smooth,
                                    rel=1e-15)
    assert b.l_at_fw >= 0 and b.l_at_bw >= 0 and b.l_ec_fw >= 2 - 1e-12 and b.l_ec_bw >= 2 - 1e-12


def test_fast_objective_matches_reference(rng):
    for mode in ("relative", "raw"):
        cfg = LossConfig(timestamps=mode)
        for _ in range(10):
            vol = random_volume(rng, int(rng.integers(1, 500)))
            grid = TileGrid.create(32, 24, 3, 2, theta=rng.normal(0, 4, (2, 3, 3)) * [1, 1, 0.2])
            ref = loss_nlmc(vol, grid, cfg)
            fast = Objective(vol, grid, cfg).breakdown(grid.theta)
            for k in ("l_at_fw", "l_at_bw", "l_ec_fw", "l_ec_bw", "l_smooth", "total"):
                assert getattr(fast, k) == pytest.approx(getattr(ref, k), rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("t_us, tol", [(0, 0.0), (300, 1e-6)])
def test_uniform_timestamp_at_gradient_vanishes(rng, t_us, tol):
    # all-zero timestamps make L_AT identically 0; any other shared value only
    # leaves the epsilon guard's dependence on the count
    n = 200
    vol = normalize_window(EventVolume.from_arrays(rng.integers(0, 16, n), rng.integers(0, 16, n), np.full(n, t_us),
                                                   np.ones(n, int), 16, 16, 0, 1000))
    cfg = LossConfig(lambda1=0.0, lambda2=0.0, timestamps="raw")
    g = loss_gradient(vol, MotionParams((2.5, 1.0), 0.2, (7.5, 7.5)), cfg)
    assert np.all(np.abs(g) <= tol)


def test_gradient_stationary_at_compensating_motion():
    # point sources at half-pixel positions whose events land exactly on pixels:
    # under the true motion each source collapses onto a symmetric 2x2 block
    v = np.array([10.0, 10.0])
    xs, ys, ts = [], [], []
    for x0, y0 in [(20.5, 30.5), (50.5, 12.5), (70.5, 60.5), (33.5, 75.5)]:
        for k in range(10):
            s = (k + 0.5) / 10
            for _ in range(5):
                xs.append(int(x0 + v[0] * s))
                ys.append(int(y0 + v[1] * s))
                ts.append(int(round(s * 1000)))
    vol = _norm(xs, ys, ts, np.ones(len(xs), int), 96, 96)
    theta = MotionParams(tuple(v), 0.0, (47.5, 47.5))
    g = loss_gradient(vol, theta)
    assert np.linalg.norm(g) < 1e-2
    # and clearly not stationary a little away from it
    assert np.linalg.norm(loss_gradient(vol, theta.with_theta([10.3, 9.8, 0.01]))) > 1e-1


def test_forward_backward_symmetry(rng):
    # events invariant under (x, y, t) -> (x, H-1-y, 1-t); motion (0, vy, omega) about the centre row
    n, w, h = 150, 24, 20
    x, y, t = rng.integers(0, w, n), rng.integers(0, h, n), rng.integers(0, 1001, n)
    p = rng.choice([-1, 1], n)
    vol = _norm(np.r_[x, x], np.r_[y, h - 1 - y], np.r_[t, 1000 - t], np.r_[p, p], w, h)
    params = MotionParams((0.0, 2.7), 0.35, ((w - 1) / 2, (h - 1) / 2))
    b = loss_nlmc(vol, params)
    assert b.l_at_fw == pytest.approx(b.l_at_bw, abs=1e-6)
    assert b.l_ec_fw == pytest.approx(b.l_ec_bw, abs=1e-6)


def _fd_gradient(vol, grid, cfg):
    h = np.array([1e-6, 1e-6, 1e-7])
    g = np.zeros_like(grid.theta)
    for idx in np.ndindex(grid.theta.shape):
        tp, tm = grid.theta.copy(), grid.theta.copy()
        tp[idx] += h[idx[-1]]
        tm[idx] -= h[idx[-1]]
        g[idx] = (loss_nlmc(vol, grid.with_theta(tp), cfg).total
                  - loss_nlmc(vol, grid.with_theta(tm), cfg).total) / (2 * h[idx[-1]])
    return g


def test_gradient_matches_finite_differences(rng):
    cfg = LossConfig(lambda2=0.01)
    for _ in range(5):
        vol = random_volume(rng, 300)
        grid = TileGrid.create(32, 24, 2, 2, theta=rng.normal(0, 3, (2, 2, 3)) * [1, 1, 0.1])
        an = loss_gradient(vol, grid, cfg)
        fd = _fd_gradient(vol, grid, cfg)
        assert np.linalg.norm(an - fd) <= 1e-3 * np.linalg.norm(fd)


def test_build_iwe_uses_tile_parameters():
    vol = _norm([2, 10], [3, 3], [0, 0], [1, 1], 16, 8)
    grid = TileGrid.create(16, 8, 2, 1, pivot="tile", theta=[[[1, 0, 0], [-2, 0, 0]]])
    iwe = build_iwe(vol, grid, 1.0)
    assert iwe.count[0, 3, 3] == 1.0 and iwe.count[0, 3, 8] == 1.0
