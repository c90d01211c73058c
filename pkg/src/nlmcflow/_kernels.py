"""Compiled inner loops for loss evaluation and its gradient.

The public functions in ``loss`` build the images with numpy and serve as
the reference; these kernels fuse warp, splat and reduction so the
optimizer can afford thousands of evaluations. They only visit touched
pixels, using ``N - sum(1 - E)`` for the exponential-image sum.
"""

import math

import numpy as np
from numba import njit

RAW = 0
RELATIVE = 1


class Workspace:
    """Scratch buffers reused across kernel calls for one sensor geometry."""

    def __init__(self, width: int, height: int, n_events: int):
        n_px = width * height
        self.width, self.height = width, height
        self.count = np.zeros(2 * n_px)
        self.tsum = np.zeros(2 * n_px)
        self.mark = np.zeros(n_px, dtype=np.uint8)
        self.touched = np.empty(min(4 * max(n_events, 1), n_px), dtype=np.int64)


@njit(cache=True)
def _splat(x, y, t, pidx, tile, theta, centers, t_ref, mode, width, height, count, tsum, mark, touched):
    n_px = width * height
    n_touched = 0
    for i in range(x.shape[0]):
        k = tile[i]
        dt = t_ref - t[i]
        a = dt * theta[k, 2]
        c = math.cos(a)
        s = math.sin(a)
        dx = x[i] - centers[k, 0]
        dy = y[i] - centers[k, 1]
        xw = c * dx - s * dy + centers[k, 0] + dt * theta[k, 0]
        yw = s * dx + c * dy + centers[k, 1] + dt * theta[k, 1]
        tw = t[i] if mode == RAW else 1.0 - abs(t[i] - t_ref)
        x0 = math.floor(xw)
        y0 = math.floor(yw)
        fx = xw - x0
        fy = yw - y0
        ix = int(x0)
        iy = int(y0)
        base = pidx[i] * n_px
        for corner in range(4):
            ox = corner & 1
            oy = corner >> 1
            wx = fx if ox else 1.0 - fx
            wy = fy if oy else 1.0 - fy
            w = wx * wy
            xi = ix + ox
            yi = iy + oy
            if w > 0.0 and xi >= 0 and xi < width and yi >= 0 and yi < height:
                q = yi * width + xi
                if mark[q] == 0:
                    mark[q] = 1
                    touched[n_touched] = q
                    n_touched += 1
                count[base + q] += w
                tsum[base + q] += w * tw
    return n_touched


@njit(cache=True)
def _reduce(count, tsum, touched, n_touched, n_px, alpha, eps):
    sum_t2 = 0.0
    active = 0
    one_minus_e0 = 0.0
    one_minus_e1 = 0.0
    for j in range(n_touched):
        q = touched[j]
        c0 = count[q]
        c1 = count[n_px + q]
        t0 = tsum[q] / (c0 + eps)
        t1 = tsum[n_px + q] / (c1 + eps)
        sum_t2 += t0 * t0 + t1 * t1
        if c0 + c1 > 0.0:
            active += 1
        one_minus_e0 += -math.expm1(-alpha * c0)
        one_minus_e1 += -math.expm1(-alpha * c1)
    l_at = sum_t2 / (active + eps)
    sum_e0 = n_px - one_minus_e0
    sum_e1 = n_px - one_minus_e1
    l_ec = n_px / sum_e0 + n_px / sum_e1
    return l_at, l_ec, active, sum_e0, sum_e1


@njit(cache=True)
def _clear(count, tsum, mark, touched, n_touched, n_px):
    for j in range(n_touched):
        q = touched[j]
        mark[q] = 0
        count[q] = 0.0
        count[n_px + q] = 0.0
        tsum[q] = 0.0
        tsum[n_px + q] = 0.0


@njit(cache=True)
def loss_terms(x, y, t, pidx, tile, theta, centers, t_ref, mode, width, height, alpha, eps,
               count, tsum, mark, touched):
    """(L_AT, L_EC) for one reference time."""
    n_px = width * height
    n = _splat(x, y, t, pidx, tile, theta, centers, t_ref, mode, width, height, count, tsum, mark, touched)
    l_at, l_ec, _, _, _ = _reduce(count, tsum, touched, n, n_px, alpha, eps)
    _clear(count, tsum, mark, touched, n, n_px)
    return l_at, l_ec


@njit(cache=True)
def loss_and_grad(x, y, t, pidx, tile, theta, centers, t_ref, mode, width, height, alpha, eps,
                  w_at, w_ec, count, tsum, mark, touched, grad):
    """(L_AT, L_EC) for one reference time; adds d(w_at*L_AT + w_ec*L_EC)/dtheta into ``grad``.

    The active-pixel count in the L_AT denominator is piecewise constant and
    treated as such; corners with zero kernel weight contribute no derivative.
    """
    n_px = width * height
    n = _splat(x, y, t, pidx, tile, theta, centers, t_ref, mode, width, height, count, tsum, mark, touched)
    l_at, l_ec, active, sum_e0, sum_e1 = _reduce(count, tsum, touched, n, n_px, alpha, eps)

    # overwrite the images with d(loss)/d(count) and d(loss)/d(tsum)
    inv_a = w_at / (active + eps)
    ec0 = w_ec * n_px * alpha / (sum_e0 * sum_e0)
    ec1 = w_ec * n_px * alpha / (sum_e1 * sum_e1)
    for j in range(n):
        q = touched[j]
        for k in range(2):
            idx = k * n_px + q
            c = count[idx] + eps
            tv = tsum[idx] / c
            g_c = -2.0 * tv * tv / c * inv_a + (ec0 if k == 0 else ec1) * math.exp(-alpha * count[idx])
            g_s = 2.0 * tv / c * inv_a
            count[idx] = g_c
            tsum[idx] = g_s

    for i in range(x.shape[0]):
        k = tile[i]
        dt = t_ref - t[i]
        a = dt * theta[k, 2]
        c = math.cos(a)
        s = math.sin(a)
        dx = x[i] - centers[k, 0]
        dy = y[i] - centers[k, 1]
        xw = c * dx - s * dy + centers[k, 0] + dt * theta[k, 0]
        yw = s * dx + c * dy + centers[k, 1] + dt * theta[k, 1]
        tw = t[i] if mode == RAW else 1.0 - abs(t[i] - t_ref)
        x0 = math.floor(xw)
        y0 = math.floor(yw)
        fx = xw - x0
        fy = yw - y0
        ix = int(x0)
        iy = int(y0)
        base = pidx[i] * n_px
        gx = 0.0
        gy = 0.0
        for corner in range(4):
            ox = corner & 1
            oy = corner >> 1
            wx = fx if ox else 1.0 - fx
            wy = fy if oy else 1.0 - fy
            xi = ix + ox
            yi = iy + oy
            if wx * wy > 0.0 and xi >= 0 and xi < width and yi >= 0 and yi < height:
                idx = base + yi * width + xi
                g = count[idx] + tw * tsum[idx]
                dwx = 1.0 if ox else -1.0
                dwy = 1.0 if oy else -1.0
                gx += g * dwx * wy
                gy += g * wx * dwy
        grad[k, 0] += gx * dt
        grad[k, 1] += gy * dt
        grad[k, 2] += dt * (gx * (-s * dx - c * dy) + gy * (c * dx - s * dy))

    _clear(count, tsum, mark, touched, n, n_px)
    return l_at, l_ec


@njit(cache=True)
def grid_search(x, y, t, pidx, candidates, center, t_refs, mode, width, height, alpha, eps, lambda1,
                count, tsum, mark, touched, out):
    """Data loss sum over ``t_refs`` for each candidate row (v_x, v_y, omega), all events sharing one pivot."""
    tile = np.zeros(x.shape[0], dtype=np.int64)
    theta = np.zeros((1, 3))
    centers = np.zeros((1, 2))
    centers[0, 0] = center[0]
    centers[0, 1] = center[1]
    for j in range(candidates.shape[0]):
        theta[0, 0] = candidates[j, 0]
        theta[0, 1] = candidates[j, 1]
        theta[0, 2] = candidates[j, 2]
        total = 0.0
        for r in range(t_refs.shape[0]):
            l_at, l_ec = loss_terms(x, y, t, pidx, tile, theta, centers, t_refs[r], mode, width, height,
                                    alpha, eps, count, tsum, mark, touched)
            total += l_at + lambda1 * l_ec
        out[j] = total
