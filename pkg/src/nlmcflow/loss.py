"""Nonlinear motion compensation objective.

Per reference time: the squared average-timestamp loss L_AT normalized by
the number of active pixels, and the exponential-count loss L_EC. Both are
evaluated for a forward (window end) and a backward (window start)
reference and combined with a Charbonnier smoothness prior on the tile
parameters::

    total = L_AT(fw) + L_AT(bw) + lambda1 * (L_EC(fw) + L_EC(bw)) + lambda2 * L_smooth
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from . import _kernels
from .events_io import EventVolume
from .iwe import DEFAULT_EPS, Iwe, exponential_image, splat_arrays, timestamp_image, timestamp_weights
from .tiles import TileGrid
from .warp import MotionParams, warp_points


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.6
    lambda1: float = 1.0
    lambda2: float = 0.001
    epsilon: float = DEFAULT_EPS
    t_ref_fw: float = 1.0
    t_ref_bw: float = 0.0
    delta: float = 1e-3  # Charbonnier offset
    timestamps: str = "relative"

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.epsilon <= 0 or self.delta <= 0:
            raise ValueError("epsilon and delta must be positive")
        if not (0 <= self.t_ref_fw <= 1 and 0 <= self.t_ref_bw <= 1):
            raise ValueError("reference times must lie in [0, 1]")
        if self.timestamps not in ("raw", "relative"):
            raise ValueError("timestamps must be 'raw' or 'relative'")

    @property
    def mode_code(self) -> int:
        return _kernels.RAW if self.timestamps == "raw" else _kernels.RELATIVE


@dataclass(frozen=True)
class LossBreakdown:
    l_at_fw: float
    l_at_bw: float
    l_ec_fw: float
    l_ec_bw: float
    l_smooth: float
    total: float

    @classmethod
    def combine(cls, l_at_fw, l_at_bw, l_ec_fw, l_ec_bw, l_smooth, config: LossConfig) -> "LossBreakdown":
        total = (l_at_fw + l_at_bw) + config.lambda1 * (l_ec_fw + l_ec_bw) + config.lambda2 * l_smooth
        return cls(float(l_at_fw), float(l_at_bw), float(l_ec_fw), float(l_ec_bw), float(l_smooth), float(total))


Motion = Union[MotionParams, TileGrid]


def _as_grid(params: Motion, vol: EventVolume) -> TileGrid:
    if isinstance(params, TileGrid):
        if (params.width, params.height) != (vol.width, vol.height):
            raise ValueError("tile grid geometry does not match the volume")
        return params
    return TileGrid.single(params, vol.width, vol.height)


def _check(vol: EventVolume) -> None:
    if not vol.normalized:
        raise ValueError("loss functions expect a normalized volume (see normalize_window)")


def build_iwe(vol: EventVolume, params: Motion, t_ref: float, config: LossConfig = LossConfig()) -> Iwe:
    """Warp each event with its tile's parameters and splat into an IWE."""
    _check(vol)
    grid = _as_grid(params, vol)
    k = grid.tile_of(vol.x, vol.y)
    theta = grid.theta.reshape(-1, 3)[k]
    centers = grid.centers.reshape(-1, 2)[k]
    xw, yw = warp_points(vol.x.astype(np.float64), vol.y.astype(np.float64), t_ref - vol.t,
                         theta[:, 0], theta[:, 1], theta[:, 2], centers[:, 0], centers[:, 1])
    weight_t = timestamp_weights(vol.t, t_ref, config.timestamps)
    count, tsum = splat_arrays(xw, yw, weight_t, (vol.p < 0).astype(np.int64), vol.width, vol.height)
    return Iwe(count, tsum)


def _at_from_iwe(iwe: Iwe, eps: float) -> float:
    t_pos = timestamp_image(iwe, "+", eps).values
    t_neg = timestamp_image(iwe, "-", eps).values
    active = np.count_nonzero(iwe.combined_count() > 0)
    return float(np.sum(t_pos ** 2 + t_neg ** 2) / (active + eps))


def _ec_from_iwe(iwe: Iwe, alpha: float) -> float:
    n_px = iwe.width * iwe.height
    return float(n_px / exponential_image(iwe, "+", alpha).values.sum()
                 + n_px / exponential_image(iwe, "-", alpha).values.sum())


def loss_at(vol: EventVolume, params: Motion, t_ref: float, config: LossConfig = LossConfig()) -> float:
    """Sum of squared average timestamps over both polarities per active pixel."""
    return _at_from_iwe(build_iwe(vol, params, t_ref, config), config.epsilon)


def loss_ec(vol: EventVolume, params: Motion, t_ref: float, config: LossConfig = LossConfig()) -> float:
    """``N/sum(E+) + N/sum(E-)`` with N the number of pixels; 2 for an empty volume."""
    return _ec_from_iwe(build_iwe(vol, params, t_ref, config), config.alpha)


def _charbonnier_terms(grid: TileGrid, delta: float):
    """Neighbour differences (scaled) for horizontal and vertical pairs."""
    scale = np.array([1.0, 1.0, grid.diagonal])
    th = grid.theta * scale
    return th[:, 1:] - th[:, :-1], th[1:, :] - th[:-1, :], scale


def loss_smooth(grid: TileGrid, delta: float = 1e-3) -> float:
    """Charbonnier penalty ``sum sqrt(|d|^2 + delta^2) - delta`` over 4-connected tile pairs.

    ``omega`` differences are multiplied by the tile diagonal so they read as px.
    """
    dh, dv, _ = _charbonnier_terms(grid, delta)
    total = 0.0
    for d in (dh, dv):
        if d.size:
            total += float(np.sum(np.sqrt(np.sum(d ** 2, axis=-1) + delta ** 2) - delta))
    return total


def loss_smooth_grad(grid: TileGrid, delta: float = 1e-3) -> np.ndarray:
    dh, dv, scale = _charbonnier_terms(grid, delta)
    g = np.zeros_like(grid.theta)
    if dh.size:
        q = dh / np.sqrt(np.sum(dh ** 2, axis=-1, keepdims=True) + delta ** 2)
        g[:, 1:] += q
        g[:, :-1] -= q
    if dv.size:
        q = dv / np.sqrt(np.sum(dv ** 2, axis=-1, keepdims=True) + delta ** 2)
        g[1:, :] += q
        g[:-1, :] -= q
    return g * scale


def loss_nlmc(vol: EventVolume, params: Motion, config: LossConfig = LossConfig()) -> LossBreakdown:
    """Full objective with its components."""
    _check(vol)
    grid = _as_grid(params, vol)
    iwe_fw = build_iwe(vol, grid, config.t_ref_fw, config)
    iwe_bw = build_iwe(vol, grid, config.t_ref_bw, config)
    return LossBreakdown.combine(
        _at_from_iwe(iwe_fw, config.epsilon), _at_from_iwe(iwe_bw, config.epsilon),
        _ec_from_iwe(iwe_fw, config.alpha), _ec_from_iwe(iwe_bw, config.alpha),
        loss_smooth(grid, config.delta), config)


class Objective:
    """Fast evaluator of the total loss (and gradient) for one volume and tile layout.

    Holds the per-event arrays and scratch buffers; ``theta`` arguments are
    ``(tiles_y, tiles_x, 3)`` arrays for the grid given at construction.
    ``offsets`` optionally displaces each event within its pixel.
    """

    def __init__(self, vol: EventVolume, grid: TileGrid, config: LossConfig = LossConfig(),
                 offsets: np.ndarray | None = None):
        _check(vol)
        self.grid = grid
        self.config = config
        self.x = vol.x.astype(np.float64)
        self.y = vol.y.astype(np.float64)
        if offsets is not None:
            # sub-pixel event positions; tile membership still follows the pixel
            self.x += offsets[:, 0]
            self.y += offsets[:, 1]
        self.t = np.ascontiguousarray(vol.t, dtype=np.float64)
        self.pidx = (vol.p < 0).astype(np.int64)
        self.tile = np.ascontiguousarray(grid.tile_of(vol.x, vol.y), dtype=np.int64)
        self.centers = np.ascontiguousarray(grid.centers.reshape(-1, 2))
        self.ws = _kernels.Workspace(vol.width, vol.height, len(vol))
        self.n_evals = 0

    def _theta(self, theta) -> np.ndarray:
        return np.ascontiguousarray(np.asarray(theta, dtype=np.float64).reshape(-1, 3))

    def _grid(self, theta) -> TileGrid:
        return self.grid.with_theta(theta)

    def breakdown(self, theta) -> LossBreakdown:
        th = self._theta(theta)
        ws, c = self.ws, self.config
        terms = []
        for t_ref in (c.t_ref_fw, c.t_ref_bw):
            terms.append(_kernels.loss_terms(self.x, self.y, self.t, self.pidx, self.tile, th, self.centers,
                                             t_ref, c.mode_code, ws.width, ws.height, c.alpha, c.epsilon,
                                             ws.count, ws.tsum, ws.mark, ws.touched))
        self.n_evals += 1
        smooth = loss_smooth(self._grid(theta), c.delta) if c.lambda2 > 0 else 0.0
        (at_fw, ec_fw), (at_bw, ec_bw) = terms
        return LossBreakdown.combine(at_fw, at_bw, ec_fw, ec_bw, smooth, c)

    def value(self, theta) -> float:
        return self.breakdown(theta).total

    def value_and_grad(self, theta):
        th = self._theta(theta)
        ws, c = self.ws, self.config
        grad = np.zeros_like(th)
        total = 0.0
        for t_ref in (c.t_ref_fw, c.t_ref_bw):
            l_at, l_ec = _kernels.loss_and_grad(self.x, self.y, self.t, self.pidx, self.tile, th, self.centers,
                                                t_ref, c.mode_code, ws.width, ws.height, c.alpha, c.epsilon,
                                                1.0, c.lambda1, ws.count, ws.tsum, ws.mark, ws.touched, grad)
            total += l_at + c.lambda1 * l_ec
        grad = grad.reshape(self.grid.theta.shape)
        if c.lambda2 > 0:
            g = self._grid(theta)
            total += c.lambda2 * loss_smooth(g, c.delta)
            grad += c.lambda2 * loss_smooth_grad(g, c.delta)
        self.n_evals += 1
        return total, grad


def loss_gradient(vol: EventVolume, params: Motion, config: LossConfig = LossConfig()) -> np.ndarray:
    """Analytic gradient of the total loss, shape ``(tiles_y, tiles_x, 3)`` as (dv_x, dv_y, domega)."""
    grid = _as_grid(params, vol)
    return Objective(vol, grid, config).value_and_grad(grid.theta)[1]
