"""Dense flow container and its text format."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

_HEADER_RE = re.compile(r"# flow w=(\d+) h=(\d+) t=(\S+)")


class FlowFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel flow (u, v) in px per unit normalized time.

    ``valid`` marks pixels where a value is reported; ``t_eval`` is the
    normalized time at which the (time-dependent) flow was evaluated.
    """

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray
    t_eval: float = 0.0

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if u.shape != v.shape or u.shape != valid.shape or u.ndim != 2:
            raise ValueError("u, v and valid must be equal-shape 2D arrays")
        if not (np.all(np.isfinite(u[valid])) and np.all(np.isfinite(v[valid]))):
            raise ValueError("flow must be finite wherever valid")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @classmethod
    def empty(cls, width: int, height: int, t_eval: float = 0.0) -> "FlowField":
        z = np.zeros((height, width))
        return cls(z, z.copy(), np.zeros((height, width), bool), t_eval)

    def masked(self, mask: np.ndarray) -> "FlowField":
        mask = self.valid & mask
        return FlowField(np.where(mask, self.u, 0.0), np.where(mask, self.v, 0.0), mask, self.t_eval)

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


def _fmt(a: float) -> str:
    s = f"{a:.6f}"
    return "0.000000" if s == "-0.000000" else s


def write_flow_file(flow: FlowField, path: Union[str, Path]) -> None:
    """Write valid pixels as ``x,y,u,v`` lines in row-major order (6 decimals)."""
    ys, xs = np.nonzero(flow.valid)  # row-major
    lines = [f"# flow w={flow.width} h={flow.height} t={_fmt(flow.t_eval)}\n"]
    for x, y, u, v in zip(xs.tolist(), ys.tolist(), flow.u[ys, xs].tolist(), flow.v[ys, xs].tolist()):
        lines.append(f"{x},{y},{_fmt(u)},{_fmt(v)}\n")
    with open(path, "w", newline="\n") as f:
        f.write("".join(lines))


def read_flow_file(path: Union[str, Path]) -> FlowField:
    lines = Path(path).read_text().split("\n")
    m = _HEADER_RE.fullmatch(lines[0].strip()) if lines else None
    if m is None:
        raise FlowFormatError("missing or malformed flow header")
    w, h, t_eval = int(m.group(1)), int(m.group(2)), float(m.group(3))
    u = np.zeros((h, w))
    v = np.zeros((h, w))
    valid = np.zeros((h, w), bool)
    for i, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        try:
            x, y = int(parts[0]), int(parts[1])
            fu, fv = float(parts[2]), float(parts[3])
        except (ValueError, IndexError):
            raise FlowFormatError(f"line {i}: malformed flow entry {line!r}") from None
        if len(parts) != 4 or not (0 <= x < w and 0 <= y < h):
            raise FlowFormatError(f"line {i}: malformed flow entry {line!r}")
        u[y, x], v[y, x], valid[y, x] = fu, fv, True
    return FlowField(u, v, valid, t_eval)
