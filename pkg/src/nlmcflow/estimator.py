"""Dense flow by direct minimization of the motion compensation objective over tiles."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from . import _kernels
from .events_io import EventVolume, event_count_image, normalize_window
from .flowfield import FlowField
from .loss import LossBreakdown, LossConfig, Objective, loss_nlmc
from .tiles import TileGrid
from .warp import flow_at

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    tiles_x: int = 4
    tiles_y: int = 4
    v_max: float = 30.0
    v_step: float = 5.0
    omega_max: float = 0.5
    omega_step: float = 0.1
    max_iter: int = 300
    tol_loss: float = 1e-7
    tol_grad: float = 1e-6
    history: int = 10
    pivot: str = "sensor"
    linear: bool = False
    dither: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("v_max", "v_step", "omega_max", "omega_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.tiles_x < 1 or self.tiles_y < 1 or self.max_iter < 0:
            raise ValueError("invalid tile count or iteration budget")


class DivergenceError(RuntimeError):
    pass


def event_offsets(vol: EventVolume, config: SolverConfig):
    """Seeded sub-pixel positions of events inside their pixels, or None.

    With integer coordinates, zero motion keeps every event (noise included)
    on a single pixel while any other motion splits it over four, which biases
    the active-pixel normalization towards zero motion.
    """
    if not config.dither:
        return None
    rng = np.random.default_rng(config.seed)
    return rng.uniform(-0.5, 0.5, size=(len(vol), 2))


def _axis(vmax: float, step: float) -> np.ndarray:
    k = int(np.floor(vmax / step + 1e-9))
    return np.round(np.arange(-k, k + 1) * step, 12)


def candidate_grid(config: SolverConfig) -> np.ndarray:
    """Candidate (v_x, v_y, omega) rows, ordered so the first minimum is the tie-break winner."""
    vs = _axis(config.v_max, config.v_step)
    ws = np.zeros(1) if config.linear else _axis(config.omega_max, config.omega_step)
    cand = np.array(np.meshgrid(vs, vs, ws, indexing="ij")).reshape(3, -1).T
    order = np.lexsort((cand[:, 2], cand[:, 1], cand[:, 0], np.linalg.norm(cand, axis=1)))
    return np.ascontiguousarray(cand[order])


def _nearest(grid: TileGrid, sources: np.ndarray, ty: int, tx: int):
    ys, xs = np.nonzero(sources)
    if len(ys) == 0:
        return None
    j = np.argmin((ys - ty) ** 2 + (xs - tx) ** 2)
    return ys[j], xs[j]


def _positions(vol: EventVolume, config: SolverConfig):
    xs, ys = vol.x.astype(np.float64), vol.y.astype(np.float64)
    offsets = event_offsets(vol, config)
    if offsets is not None:
        xs, ys = xs + offsets[:, 0], ys + offsets[:, 1]
    return xs, ys


def _search(xs, ys, vol: EventVolume, sel, cand, center, loss_config: LossConfig, ws, scores) -> np.ndarray:
    t_refs = np.array([loss_config.t_ref_fw, loss_config.t_ref_bw])
    _kernels.grid_search(xs[sel], ys[sel], np.ascontiguousarray(vol.t[sel]), (vol.p[sel] < 0).astype(np.int64),
                         cand, center, t_refs, loss_config.mode_code, vol.width, vol.height,
                         loss_config.alpha, loss_config.epsilon, loss_config.lambda1,
                         ws.count, ws.tsum, ws.mark, ws.touched, scores)
    return cand[int(np.argmin(scores))]


def coarse_grid_search(vol: EventVolume, config: SolverConfig = SolverConfig(),
                       loss_config: LossConfig = LossConfig()) -> TileGrid:
    """Exhaustive per-tile search over the candidate grid, data terms only.

    Each tile is scored with its own events. Tiles without events get zero
    motion and ``valid=False``; ragged edge tiles copy the result of the
    nearest full tile that has events.
    """
    vol = normalize_window(vol)
    grid = TileGrid.create(vol.width, vol.height, config.tiles_x, config.tiles_y, config.pivot)
    cand = candidate_grid(config)
    tiles = grid.tile_of(vol.x, vol.y)
    ws = _kernels.Workspace(vol.width, vol.height, len(vol))
    xs, ys = _positions(vol, config)
    theta = np.zeros_like(grid.theta)
    valid = np.zeros(grid.valid.shape, bool)
    full = np.zeros(grid.valid.shape, bool)
    scores = np.empty(len(cand))
    for ty in range(grid.tiles_y):
        for tx in range(grid.tiles_x):
            sel = tiles == ty * grid.tiles_x + tx
            valid[ty, tx] = sel.any()
            full[ty, tx] = valid[ty, tx] and not grid.is_ragged(ty, tx)
            if full[ty, tx]:
                theta[ty, tx] = _search(xs, ys, vol, sel, cand, grid.centers[ty, tx], loss_config, ws, scores)
    for ty, tx in zip(*np.nonzero(valid & ~full)):
        src = _nearest(grid, full, ty, tx)
        if src is not None:
            theta[ty, tx] = theta[src]
    return grid.with_theta(theta, valid)


def global_grid_search(vol: EventVolume, config: SolverConfig = SolverConfig(),
                       loss_config: LossConfig = LossConfig(), levels: int = 4) -> np.ndarray:
    """Best single candidate for all events, pivoting about the sensor centre.

    After the configured grid, ``levels`` rounds of a 3x3x3 search with
    halved steps around the current best narrow it down, so refinement
    starts inside the right basin even for off-grid motion. The basin is
    picked on dithered coordinates; the narrowing uses the exact ones, like
    refinement does.
    """
    vol = normalize_window(vol)
    cand = candidate_grid(config)
    if len(vol) == 0:
        return np.zeros(3)
    ws = _kernels.Workspace(vol.width, vol.height, len(vol))
    xs, ys = _positions(vol, config)
    center = np.array([(vol.width - 1) / 2, (vol.height - 1) / 2])
    sel = np.ones(len(vol), bool)
    best = _search(xs, ys, vol, sel, cand, center, loss_config, ws, np.empty(len(cand)))
    xs, ys = vol.x.astype(np.float64), vol.y.astype(np.float64)
    step = np.array([config.v_step, config.v_step, 0.0 if config.linear else config.omega_step])
    offsets = np.array(np.meshgrid(*[(-1.0, 0.0, 1.0)] * 3, indexing="ij")).reshape(3, -1).T
    for _ in range(levels):
        step = step / 2
        local = np.unique(best + offsets * step, axis=0)
        # the current best first, so ties keep it
        local = local[np.argsort(np.linalg.norm(local - best, axis=1), kind="stable")]
        best = _search(xs, ys, vol, sel, np.ascontiguousarray(local), center, loss_config, ws,
                       np.empty(len(local)))
    return best


def propagate_neighbors(vol: EventVolume, grid: TileGrid, config: SolverConfig = SolverConfig(),
                        loss_config: LossConfig = LossConfig(), max_sweeps: int = 4,
                        extra: Optional[np.ndarray] = None) -> TileGrid:
    """Let each tile adopt a 4-neighbour's parameters when that lowers the joint objective.

    The per-tile coarse search only sees events that started inside the tile,
    so trails crossing tile borders are truncated, and tiles whose own events
    are mostly noise lock onto arbitrary minima; the joint objective sees
    complete trails and every tile at once. ``extra`` holds parameter rows
    that every tile may also adopt; the grid with all tiles set to one of
    them is tried first as a starting point.
    """
    vol = normalize_window(vol)
    grid = _fill_empty(grid)
    obj = Objective(vol, grid, loss_config, event_offsets(vol, config))
    theta = grid.theta.copy()
    best = obj.value(theta)
    extra = np.zeros((0, 3)) if extra is None else np.asarray(extra, dtype=np.float64).reshape(-1, 3)
    for row in extra:
        trial = np.broadcast_to(row, theta.shape).copy()
        f = obj.value(trial)
        if f < best:
            best, theta = f, trial
    for _ in range(max_sweeps):
        changed = False
        for ty in range(grid.tiles_y):
            for tx in range(grid.tiles_x):
                if not grid.valid[ty, tx]:
                    continue
                options = [theta[ny, nx] for ny, nx in ((ty - 1, tx), (ty + 1, tx), (ty, tx - 1), (ty, tx + 1))
                           if 0 <= ny < grid.tiles_y and 0 <= nx < grid.tiles_x and grid.valid[ny, nx]]
                options += [grid.theta[ty, tx], *extra]
                for row in options:
                    if np.array_equal(row, theta[ty, tx]):
                        continue
                    trial = theta.copy()
                    trial[ty, tx] = row
                    f = obj.value(trial)
                    if f < best:
                        best, theta, changed = f, trial, True
        if not changed:
            break
    return grid.with_theta(theta)


@dataclass
class RefineResult:
    grid: TileGrid
    trace: List[float] = field(default_factory=list)
    iterations: int = 0
    reason: str = ""


def _lever_arms(grid: TileGrid) -> np.ndarray:
    """RMS distance of each tile's pixels from its pivot, floored at half the tile diagonal."""
    arms = np.empty((grid.tiles_y, grid.tiles_x))
    for ty in range(grid.tiles_y):
        for tx in range(grid.tiles_x):
            x0, x1, y0, y1 = grid.bounds(ty, tx)
            yy, xx = np.mgrid[y0:y1, x0:x1]
            cx, cy = grid.centers[ty, tx]
            arms[ty, tx] = max(np.sqrt(np.mean((xx - cx) ** 2 + (yy - cy) ** 2)), grid.diagonal / 2)
    return arms


def _fill_empty(grid: TileGrid) -> TileGrid:
    theta = grid.theta.copy()
    for ty, tx in zip(*np.nonzero(~grid.valid)):
        src = _nearest(grid, grid.valid, ty, tx)
        if src is not None:
            theta[ty, tx] = grid.theta[src]
    return grid.with_theta(theta)


def refine_params(vol: EventVolume, init: TileGrid, config: SolverConfig = SolverConfig(),
                  loss_config: LossConfig = LossConfig()) -> RefineResult:
    """Joint descent on the full objective (with smoothness) from a coarse initialization.

    Limited-memory quasi-Newton directions in a per-tile scaled space
    (omega measured as displacement at the tile's lever arm), backtracking
    line search, and acceptance only on strict decrease, so the loss trace
    is monotone. Empty tiles start from their nearest non-empty tile.
    Refinement is local and uses the exact event coordinates; the
    dithering of the search stages only matters for picking a basin.
    """
    vol = normalize_window(vol)
    grid = _fill_empty(init)
    obj = Objective(vol, grid, loss_config)
    scale = np.ones(grid.theta.shape)
    scale[..., 2] = 1.0 / _lever_arms(grid)
    free = np.ones(grid.theta.shape)
    if config.linear:
        free[..., 2] = 0.0

    def fg(z):
        f, g = obj.value_and_grad(z * scale)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            raise DivergenceError(f"loss became non-finite (f={f}) at theta={(z * scale).tolist()}")
        return f, g * scale * free

    z = grid.theta / scale
    f, g = fg(z)
    trace = [f]
    s_hist, y_hist = [], []
    reason = "max_iter"
    it = 0
    for it in range(1, config.max_iter + 1):
        if np.linalg.norm(g) < config.tol_grad:
            reason = "gradient"
            break
        d = -_two_loop(g, s_hist, y_hist)
        if np.vdot(g, d) >= 0:
            s_hist.clear(); y_hist.clear()
            d = -g
        step = 1.0 if s_hist else min(1.0, 0.5 / np.abs(g).max())
        accepted = False
        for attempt in range(2):
            for _ in range(40):
                z_new = z + step * d
                f_new, g_new = fg(z_new)
                if f_new < f + 1e-4 * step * np.vdot(g, d) and f_new < f:
                    accepted = True
                    break
                step *= 0.5
            if accepted or attempt:
                break
            # quasi-Newton direction failed: restart from steepest descent
            s_hist.clear(); y_hist.clear()
            d = -g
            step = min(1.0, 0.5 / np.abs(g).max())
        if not accepted:
            reason = "line_search"
            break
        s, yv = z_new - z, g_new - g
        if np.vdot(s, yv) > 1e-12:
            s_hist.append(s); y_hist.append(yv)
            if len(s_hist) > config.history:
                s_hist.pop(0); y_hist.pop(0)
        improvement = f - f_new
        z, f, g = z_new, f_new, g_new
        trace.append(f)
        if improvement < config.tol_loss:
            reason = "loss"
            break
    log.debug("refine stopped after %d iterations (%s), loss %.6g", it, reason, f)
    return RefineResult(grid.with_theta(z * scale, init.valid), trace, it, reason)


def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / np.vdot(y, s)
        a = rho * np.vdot(s, q)
        alphas.append((rho, a))
        q -= a * y
    if s_hist:
        q *= np.vdot(s_hist[-1], y_hist[-1]) / np.vdot(y_hist[-1], y_hist[-1])
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * np.vdot(y, q)
        q += (a - b) * s
    return q


@dataclass
class FlowEstimate:
    flow: FlowField
    grid: TileGrid
    loss: LossBreakdown
    trace: List[float] = field(default_factory=list)


def assemble_flow(grid: TileGrid, mask: np.ndarray, t_eval: float) -> FlowField:
    """Per-pixel flow from each pixel's tile parameters, reported where ``mask`` is set."""
    yy, xx = np.mgrid[0:grid.height, 0:grid.width].astype(np.float64)
    k = grid.pixel_tile_map()
    th = grid.theta.reshape(-1, 3)[k]
    c = grid.centers.reshape(-1, 2)[k]
    u, v = flow_at(xx, yy, t_eval, th[..., 0], th[..., 1], th[..., 2], c[..., 0], c[..., 1])
    return FlowField(np.where(mask, u, 0.0), np.where(mask, v, 0.0), mask, t_eval)


def estimate_flow(vol: EventVolume, config: SolverConfig = SolverConfig(),
                  loss_config: LossConfig = LossConfig()) -> FlowEstimate:
    """Normalize, coarse search, refine, and evaluate the flow at the backward reference time.

    Flow is only reported on pixels with at least one input event.
    """
    norm = normalize_window(vol)
    if len(norm) == 0:
        grid = TileGrid.create(vol.width, vol.height, config.tiles_x, config.tiles_y, config.pivot)
        grid = grid.with_theta(grid.theta, np.zeros(grid.valid.shape, bool))
        return FlowEstimate(FlowField.empty(vol.width, vol.height, loss_config.t_ref_bw), grid,
                            loss_nlmc(norm, grid, loss_config))
    coarse = coarse_grid_search(norm, config, loss_config)
    init = propagate_neighbors(norm, coarse, config, loss_config,
                               extra=global_grid_search(norm, config, loss_config))
    refined = refine_params(norm, init, config, loss_config)
    counts = event_count_image(norm).total
    flow = assemble_flow(refined.grid, counts > 0, loss_config.t_ref_bw)
    breakdown = Objective(norm, refined.grid, loss_config).breakdown(refined.grid.theta)
    return FlowEstimate(flow, refined.grid, breakdown, refined.trace)


def linear_baseline_estimate(vol: EventVolume, config: SolverConfig = SolverConfig(),
                             loss_config: LossConfig = LossConfig()) -> FlowEstimate:
    """Same pipeline with the rotation rate frozen at zero (linear motion model)."""
    return estimate_flow(vol, replace(config, linear=True), loss_config)
