"""Images of warped events (IWE): bilinear splatting, average-timestamp and
exponential-count images.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from .warp import WarpedEvents

DEFAULT_EPS = 1e-9
POLARITIES = {"+": 0, "-": 1, 1: 0, -1: 1}


def _pol_index(polarity) -> int:
    try:
        return POLARITIES[polarity]
    except KeyError:
        raise ValueError(f"polarity must be one of '+', '-', 1, -1, got {polarity!r}") from None


def kernel(a):
    """Linear sampling kernel max(0, 1 - |a|)."""
    return np.maximum(0.0, 1.0 - np.abs(a))


def bilinear_weights(x: float, y: float, width: int, height: int) -> List[Tuple[Tuple[int, int], float]]:
    """The (up to 4) in-bounds pixels ``(col, row)`` a point splats to, with weights.

    Zero-weight neighbours are omitted, so integer coordinates give one pair.
    """
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    out = []
    for yi in (y0, y0 + 1):
        for xi in (x0, x0 + 1):
            w = float(kernel(xi - x) * kernel(yi - y))
            if w > 0.0 and 0 <= xi < width and 0 <= yi < height:
                out.append(((xi, yi), w))
    return out


def timestamp_weights(t: np.ndarray, t_ref: float, mode: str = "relative") -> np.ndarray:
    """Per-event timestamp value accumulated into the timestamp image.

    ``"raw"`` uses the normalized timestamp itself. ``"relative"`` uses
    ``1 - |t - t_ref|``, which is identical to ``"raw"`` at ``t_ref = 1`` and
    mirrors it at ``t_ref = 0``, so events far from the reference are the
    low-valued ones in both warping directions.
    """
    if mode == "raw":
        return np.asarray(t, dtype=np.float64)
    if mode == "relative":
        return 1.0 - np.abs(np.asarray(t, dtype=np.float64) - t_ref)
    raise ValueError(f"unknown timestamp mode {mode!r}")


@dataclass(frozen=True)
class Iwe:
    """Per-polarity accumulated images; axis 0 is polarity (0: +, 1: -)."""

    count: np.ndarray  # (2, H, W) sum of kernel weights
    tsum: np.ndarray   # (2, H, W) kernel-weighted timestamp sum

    @property
    def width(self) -> int:
        return self.count.shape[2]

    @property
    def height(self) -> int:
        return self.count.shape[1]

    def combined_count(self) -> np.ndarray:
        return self.count[0] + self.count[1]


@dataclass(frozen=True)
class TimestampImage:
    values: np.ndarray
    epsilon: float


@dataclass(frozen=True)
class ExponentialImage:
    values: np.ndarray
    alpha: float


def splat_arrays(x, y, weight_t, pol_idx, width: int, height: int):
    """Bilinear accumulation of count and ``weight_t`` into (2, H, W) images.

    ``pol_idx`` is 0 for positive and 1 for negative events.
    """
    n_px = width * height
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    base = pol_idx.astype(np.int64) * n_px
    idx_parts, w_parts, wt_parts = [], [], []
    for ox, oy, w in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                      (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        xi, yi = x0 + ox, y0 + oy
        keep = (xi >= 0) & (xi < width) & (yi >= 0) & (yi < height) & (w > 0)
        idx_parts.append(base[keep] + yi[keep] * width + xi[keep])
        w_parts.append(w[keep])
        wt_parts.append(w[keep] * weight_t[keep])
    idx = np.concatenate(idx_parts)
    count = np.bincount(idx, np.concatenate(w_parts), minlength=2 * n_px)
    tsum = np.bincount(idx, np.concatenate(wt_parts), minlength=2 * n_px)
    return count.reshape(2, height, width), tsum.reshape(2, height, width)


def splat(warped: WarpedEvents, width: int, height: int, timestamps: str = "relative") -> Iwe:
    """Accumulate warped events into per-polarity count and timestamp-sum images.

    Contributions falling outside ``[0, W) x [0, H)`` are dropped.
    """
    weight_t = timestamp_weights(warped.t, warped.t_ref, timestamps)
    pol_idx = (np.asarray(warped.p) < 0).astype(np.int64)
    count, tsum = splat_arrays(np.asarray(warped.x, np.float64), np.asarray(warped.y, np.float64),
                               weight_t, pol_idx, width, height)
    return Iwe(count, tsum)


def timestamp_image(iwe: Iwe, polarity, epsilon: float = DEFAULT_EPS) -> TimestampImage:
    """Average timestamp per pixel, ``tsum / (count + epsilon)``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    k = _pol_index(polarity)
    return TimestampImage(iwe.tsum[k] / (iwe.count[k] + epsilon), epsilon)


def exponential_image(iwe: Iwe, polarity, alpha: float = 0.6) -> ExponentialImage:
    """Saturating count image ``exp(-alpha * count)``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    k = _pol_index(polarity)
    return ExponentialImage(np.exp(-alpha * iwe.count[k]), alpha)


def write_pgm(image: np.ndarray, path: Union[str, Path]) -> None:
    """Binary 16-bit PGM (P5), scaled so the image maximum maps to 65535."""
    image = np.asarray(image, dtype=np.float64)
    peak = image.max() if image.size else 0.0
    scaled = np.zeros(image.shape) if peak <= 0 else np.clip(image, 0, None) / peak * 65535.0
    data = np.rint(scaled).astype(">u2")
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(data.tobytes())
