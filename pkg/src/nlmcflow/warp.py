"""Nonlinear (translation + in-plane rotation) event warp and the flow it induces.

A point observed at time ``t`` is transported to the reference time
``t_ref`` with the signed time step ``dt = t_ref - t``::

    x' = R(dt * omega) (x - c) + c + dt * v

so the warp is the trajectory of the motion model, and the optical flow is
its time derivative ``omega * R(pi/2 + dt * omega) (x - c) + v``. With
``c = (0, 0)`` this is the plain similarity transform ``R(t w) x + t v``;
with ``omega = 0`` it reduces to the linear model ``x + dt * v``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .events_io import EventVolume
from .flowfield import FlowField


def rotation2d(angle: float) -> np.ndarray:
    """2x2 rotation matrix, ``[[cos a, -sin a], [sin a, cos a]]``."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class MotionParams:
    """Motion parameters of one region.

    ``v`` is in px per unit normalized time, ``omega`` in rad per unit
    normalized time, ``center`` is the rotation pivot in px.
    """

    v: Tuple[float, float] = (0.0, 0.0)
    omega: float = 0.0
    center: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        v = tuple(float(a) for a in self.v)
        c = tuple(float(a) for a in self.center)
        if len(v) != 2 or len(c) != 2:
            raise ValueError("v and center must be 2-vectors")
        if not np.all(np.isfinite(v + c + (float(self.omega),))):
            raise ValueError("motion parameters must be finite")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "omega", float(self.omega))

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.v[0], self.v[1], self.omega])

    def with_theta(self, theta) -> "MotionParams":
        return MotionParams((theta[0], theta[1]), theta[2], self.center)


@dataclass(frozen=True)
class WarpedEvents:
    """Sub-pixel warped event coordinates.

    ``t`` keeps the original normalized timestamps and ``t_ref`` the reference
    time the events were warped to. Out-of-bounds events are kept.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    t_ref: float

    def __len__(self) -> int:
        return len(self.x)


def warp_points(x, y, dt, vx, vy, omega, cx, cy):
    """Vectorized warp; every argument broadcasts (per-event parameters allowed)."""
    a = dt * omega
    c, s = np.cos(a), np.sin(a)
    dx, dy = x - cx, y - cy
    return c * dx - s * dy + cx + dt * vx, s * dx + c * dy + cy + dt * vy


def warp_events(vol: EventVolume, params: MotionParams, t_ref: float) -> WarpedEvents:
    """Warp every event of a normalized volume to ``t_ref``."""
    if not vol.normalized:
        raise ValueError("warp_events expects a normalized volume")
    if not 0.0 <= t_ref <= 1.0:
        raise ValueError("t_ref must lie in [0, 1]")
    dt = t_ref - vol.t
    xw, yw = warp_points(vol.x.astype(np.float64), vol.y.astype(np.float64), dt,
                         params.v[0], params.v[1], params.omega, *params.center)
    return WarpedEvents(xw, yw, vol.t, vol.p, float(t_ref))


def flow_at(x, y, t, vx, vy, omega, cx, cy):
    """Time derivative of the warp trajectory at time ``t``; broadcasts like ``warp_points``."""
    a = np.pi / 2 + t * omega
    c, s = np.cos(a), np.sin(a)
    dx, dy = x - cx, y - cy
    return omega * (c * dx - s * dy) + vx, omega * (s * dx + c * dy) + vy


def flow_from_params(params: MotionParams, width: int, height: int, t: float = 0.0) -> FlowField:
    """Dense flow over the pixel grid, valid everywhere."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    u, v = flow_at(xx, yy, t, params.v[0], params.v[1], params.omega, *params.center)
    return FlowField(u, v, np.ones((height, width), bool), t)
