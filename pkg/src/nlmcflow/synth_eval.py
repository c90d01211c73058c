"""Synthetic event scenes with ground-truth flow, flow metrics and flow rendering."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from .events_io import EventVolume
from .flowfield import FlowField
from .warp import MotionParams, flow_at, warp_points

PATTERNS = ("edge", "bar_grid", "random_texture")
OUTLIER_PX = 3.0


@dataclass(frozen=True)
class SceneSpec:
    """Synthetic scene description.

    ``density`` is the number of events per source pixel (edge pixel or
    texture dot) per window; ``noise`` is the number of uniform background
    events as a fraction of the signal events. ``vx, vy, omega`` are in
    px (rad) per window and rotate about ``(cx, cy)``, which defaults to the
    sensor centre. ``contrast_threshold`` documents the event model and does
    not affect generation.
    """

    pattern: str = "edge"
    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0
    cx: float = float("nan")
    cy: float = float("nan")
    density: float = 100.0
    noise: float = 0.0
    contrast_threshold: float = 0.2
    seed: int = 0
    width: int = 128
    height: int = 128
    window_us: int = 50_000
    edge_x: float = 20.0
    edge_dash: int = 4
    bar_spacing: int = 16
    n_dots: int = 150

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"pattern must be one of {PATTERNS}")
        if not self.density > 0:
            raise ValueError("density must be positive")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if self.width <= 0 or self.height <= 0 or self.window_us <= 0:
            raise ValueError("geometry and window length must be positive")

    @property
    def center(self) -> Tuple[float, float]:
        cx = (self.width - 1) / 2 if np.isnan(self.cx) else self.cx
        cy = (self.height - 1) / 2 if np.isnan(self.cy) else self.cy
        return (cx, cy)

    @property
    def motion(self) -> MotionParams:
        return MotionParams((self.vx, self.vy), self.omega, self.center)

    def to_dict(self) -> Dict[str, object]:
        d = asdict(self)
        d["cx"], d["cy"] = self.center
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, str]) -> "SceneSpec":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for k, v in d.items():
            if k not in types:
                raise ValueError(f"unknown scene key {k!r}")
            kind = types[k]
            kwargs[k] = v if kind == "str" else int(v) if kind == "int" else float(v)
        return cls(**kwargs)


def read_scene_file(path: Union[str, Path]) -> SceneSpec:
    entries = {}
    for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {i}: expected key=value")
        k, v = line.split("=", 1)
        entries[k.strip()] = v.strip()
    return SceneSpec.from_dict(entries)


def _sources(spec: SceneSpec, rng: np.random.Generator):
    """Source points (x, y) at t=0 and their polarities."""
    w, h = spec.width, spec.height
    if spec.pattern == "edge":
        # contrast varies along the edge: runs of edge_dash firing rows alternate with silent runs
        ys = np.arange(h, dtype=np.float64)
        if spec.edge_dash > 0:
            ys = ys[(np.arange(h) // spec.edge_dash) % 2 == 0]
        return np.full(len(ys), spec.edge_x), ys, np.ones(len(ys), dtype=np.int8)
    if spec.pattern == "bar_grid":
        # bars of width spacing/2: rising edge +1, falling edge -1, both axes
        s = spec.bar_spacing
        xs, ys, ps = [], [], []
        for x0 in range(s // 2, w, s):
            for edge, pol in ((x0, 1), (x0 + s // 4, -1)):
                if edge < w:
                    xs.append(np.full(h, edge)); ys.append(np.arange(h)); ps.append(np.full(h, pol))
        for y0 in range(s // 2, h, s):
            for edge, pol in ((y0, 1), (y0 + s // 4, -1)):
                if edge < h:
                    xs.append(np.arange(w)); ys.append(np.full(w, edge)); ps.append(np.full(w, pol))
        return (np.concatenate(xs).astype(np.float64), np.concatenate(ys).astype(np.float64),
                np.concatenate(ps).astype(np.int8))
    # random texture: dots inside the centred disc so rotations keep them on the sensor
    cx, cy = (w - 1) / 2, (h - 1) / 2
    r_max = 0.45 * min(w, h)
    r = r_max * np.sqrt(rng.uniform(size=spec.n_dots))
    a = rng.uniform(0, 2 * np.pi, size=spec.n_dots)
    ps = rng.choice(np.array([-1, 1], dtype=np.int8), size=spec.n_dots)
    return cx + r * np.cos(a), cy + r * np.sin(a), ps


def synth_scene(spec: SceneSpec) -> Tuple[EventVolume, FlowField]:
    """Generate events of the scene moving along the warp trajectory and ground-truth flow.

    A source point at ``x0`` is at ``W(x0, s)`` at normalized time ``s``, with
    ``W`` the warp model under the scene motion; events are emitted at the
    rounded position. The first two signal events are pinned to the window
    ends so the volume spans exactly ``[0, window_us]``. Ground truth is the
    model flow at ``t = 0``, valid on pixels hit by signal events.
    """
    rng = np.random.default_rng(spec.seed)
    sx, sy, sp = _sources(spec, rng)
    n_signal = int(round(spec.density * len(sx)))
    if n_signal < 2:
        raise ValueError("scene yields fewer than two events")
    src = rng.integers(0, len(sx), size=n_signal)
    t_us = rng.integers(0, spec.window_us + 1, size=n_signal)
    t_us[0], t_us[1] = 0, spec.window_us
    s = t_us / spec.window_us
    m = spec.motion
    # the warp with dt = s carries the t=0 position to time s
    xw, yw = warp_points(sx[src], sy[src], s, m.v[0], m.v[1], m.omega, *m.center)
    xi, yi = np.rint(xw).astype(np.int64), np.rint(yw).astype(np.int64)
    inside = (xi >= 0) & (xi < spec.width) & (yi >= 0) & (yi < spec.height)
    inside[:2] = True
    xi[:2] = np.clip(xi[:2], 0, spec.width - 1)
    yi[:2] = np.clip(yi[:2], 0, spec.height - 1)
    xs, ys, ts, ps = xi[inside], yi[inside], t_us[inside], sp[src][inside]

    gt_mask = np.zeros((spec.height, spec.width), bool)
    gt_mask[ys, xs] = True

    n_noise = int(round(spec.noise * len(xs)))
    if n_noise:
        xs = np.concatenate([xs, rng.integers(0, spec.width, n_noise)])
        ys = np.concatenate([ys, rng.integers(0, spec.height, n_noise)])
        ts = np.concatenate([ts, rng.integers(0, spec.window_us + 1, n_noise)])
        ps = np.concatenate([ps, rng.choice(np.array([-1, 1], dtype=np.int8), n_noise)])

    vol = EventVolume.from_arrays(xs, ys, ts, ps, spec.width, spec.height, 0, spec.window_us)
    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    u, v = flow_at(xx, yy, 0.0, m.v[0], m.v[1], m.omega, *m.center)
    return vol, FlowField(u, v, gt_mask, 0.0)


@dataclass(frozen=True)
class EvalReport:
    aee: float
    ae: float
    out_pct: float
    n_valid: int

    def csv_line(self) -> str:
        return f"{self.aee:.6f},{self.ae:.6f},{self.out_pct:.6f},{self.n_valid}"


class GeometryMismatch(ValueError):
    pass


def eval_metrics(pred: FlowField, gt: FlowField, mask=None) -> EvalReport:
    """Average endpoint error, mean angular error (degrees) and outlier fraction.

    The angular error is the angle between ``(u, v, 1)`` and ``(u*, v*, 1)``.
    Outliers have endpoint error strictly above 3 px. ``mask`` defaults to
    the intersection of both valid masks and is always clipped to it.
    """
    if pred.u.shape != gt.u.shape:
        raise GeometryMismatch("geometry mismatch")
    m = pred.valid & gt.valid
    if mask is not None:
        m &= np.asarray(mask, bool)
    if not m.any():
        raise ValueError("no valid pixels")
    pu, pv, gu, gv = pred.u[m], pred.v[m], gt.u[m], gt.v[m]
    epe = np.hypot(pu - gu, pv - gv)
    a = np.stack([pu, pv, np.ones_like(pu)], axis=-1)
    b = np.stack([gu, gv, np.ones_like(gu)], axis=-1)
    # atan2 of |a x b| and a.b stays accurate near zero angle
    ang = np.arctan2(np.linalg.norm(np.cross(a, b), axis=-1), np.sum(a * b, axis=-1))
    return EvalReport(float(epe.mean()), float(np.degrees(ang).mean()), float(np.mean(epe > OUTLIER_PX)),
                      int(m.sum()))


def hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorized HSV to RGB, all channels in [0, 1]."""
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    choices = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    rgb = np.zeros(h.shape + (3,))
    for k, (r, g, b) in enumerate(choices):
        sel = i == k
        rgb[sel] = np.stack([r[sel], g[sel], b[sel]], axis=-1)
    return rgb


def flow_to_rgb(flow: FlowField) -> np.ndarray:
    """8-bit colour-wheel image: hue from direction, saturation from relative magnitude."""
    mag = flow.magnitude()
    peak = mag[flow.valid].max() if flow.valid.any() else 0.0
    hue = (np.arctan2(flow.v, flow.u) / (2 * np.pi)) % 1.0
    sat = np.zeros_like(mag) if peak <= 0 else np.clip(mag / peak, 0.0, 1.0)
    rgb = hsv_to_rgb(hue, sat, np.ones_like(mag))
    rgb[~flow.valid] = 0.0
    return np.rint(rgb * 255).astype(np.uint8)


def render_flow(flow: FlowField, path: Union[str, Path]) -> None:
    """Write the colour-wheel rendering as binary PPM (P6)."""
    rgb = flow_to_rgb(flow)
    with open(path, "wb") as f:
        f.write(f"P6\n{flow.width} {flow.height}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())
