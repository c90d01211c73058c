"""Tile partition of the sensor with one set of motion parameters per tile."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .warp import MotionParams


@dataclass(frozen=True, eq=False)
class TileGrid:
    """Per-tile motion parameters ``theta[ty, tx] = (v_x, v_y, omega)``.

    Tiles are ``tile_w x tile_h`` pixels, row-major from the top-left; the
    last row/column may be ragged. ``centers[ty, tx]`` is the rotation pivot
    used by that tile and ``valid`` is False for tiles without events.
    """

    width: int
    height: int
    tiles_x: int
    tiles_y: int
    theta: np.ndarray    # (tiles_y, tiles_x, 3)
    centers: np.ndarray  # (tiles_y, tiles_x, 2)
    valid: np.ndarray    # (tiles_y, tiles_x)

    @classmethod
    def create(cls, width: int, height: int, tiles_x: int = 1, tiles_y: int = 1,
               pivot: str = "sensor", theta=None) -> "TileGrid":
        """Zero-motion grid.

        ``pivot="sensor"`` pivots every tile about the sensor centre,
        ``pivot="tile"`` about each tile's own centre.
        """
        if tiles_x < 1 or tiles_y < 1:
            raise ValueError("need at least one tile per axis")
        tw, th = math.ceil(width / tiles_x), math.ceil(height / tiles_y)
        if (tiles_x - 1) * tw >= width or (tiles_y - 1) * th >= height:
            raise ValueError(f"{tiles_x}x{tiles_y} tiles leave an empty tile on a {width}x{height} sensor")
        centers = np.empty((tiles_y, tiles_x, 2))
        if pivot == "sensor":
            centers[...] = ((width - 1) / 2, (height - 1) / 2)
        elif pivot == "tile":
            for j in range(tiles_y):
                for i in range(tiles_x):
                    x0, x1 = i * tw, min((i + 1) * tw, width)
                    y0, y1 = j * th, min((j + 1) * th, height)
                    centers[j, i] = ((x0 + x1 - 1) / 2, (y0 + y1 - 1) / 2)
        else:
            raise ValueError(f"unknown pivot mode {pivot!r}")
        if theta is None:
            theta = np.zeros((tiles_y, tiles_x, 3))
        return cls(width, height, tiles_x, tiles_y, np.array(theta, dtype=np.float64).reshape(tiles_y, tiles_x, 3),
                   centers, np.ones((tiles_y, tiles_x), bool))

    @classmethod
    def single(cls, params: MotionParams, width: int, height: int) -> "TileGrid":
        grid = cls.create(width, height)
        grid.centers[0, 0] = params.center
        grid.theta[0, 0] = params.theta
        return grid

    @property
    def tile_w(self) -> int:
        return math.ceil(self.width / self.tiles_x)

    @property
    def tile_h(self) -> int:
        return math.ceil(self.height / self.tiles_y)

    @property
    def n_tiles(self) -> int:
        return self.tiles_x * self.tiles_y

    @property
    def diagonal(self) -> float:
        return math.hypot(self.tile_w, self.tile_h)

    def with_theta(self, theta, valid=None) -> "TileGrid":
        theta = np.array(theta, dtype=np.float64).reshape(self.tiles_y, self.tiles_x, 3)
        return replace(self, theta=theta, valid=self.valid.copy() if valid is None else np.asarray(valid, bool))

    def bounds(self, ty: int, tx: int):
        """Pixel bounds ``(x0, x1, y0, y1)`` (half-open) of a tile."""
        return (tx * self.tile_w, min((tx + 1) * self.tile_w, self.width),
                ty * self.tile_h, min((ty + 1) * self.tile_h, self.height))

    def is_ragged(self, ty: int, tx: int) -> bool:
        x0, x1, y0, y1 = self.bounds(ty, tx)
        return (x1 - x0) < self.tile_w or (y1 - y0) < self.tile_h

    def tile_of(self, x, y) -> np.ndarray:
        """Flat (row-major) tile index of each pixel coordinate."""
        return (np.asarray(y) // self.tile_h) * self.tiles_x + np.asarray(x) // self.tile_w

    def params(self, ty: int, tx: int) -> MotionParams:
        return MotionParams(tuple(self.theta[ty, tx, :2]), self.theta[ty, tx, 2], tuple(self.centers[ty, tx]))

    def pixel_tile_map(self) -> np.ndarray:
        yy, xx = np.mgrid[0:self.height, 0:self.width]
        return self.tile_of(xx, yy)
