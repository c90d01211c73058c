"""Event containers, the text event format and the per-polarity event count image."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Union

import numpy as np

PathLike = Union[str, Path]

_HEADER_RE = re.compile(r"#\s*w=(\d+)\s+h=(\d+)")
_LINE_RE = re.compile(r"(\d+),(\d+),(\d+),([01])")


class EventFormatError(ValueError):
    """Raised for malformed or out-of-bounds event files."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class Event(NamedTuple):
    x: int
    y: int
    t: float
    p: int


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EventVolume:
    """A time window of events, sorted by timestamp.

    Raw volumes carry integer microsecond timestamps; ``normalize_window``
    returns a volume with float timestamps in [0, 1] and ``t0=0, t1=1``.
    Polarity is stored as -1/+1.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    width: int
    height: int
    t0: float
    t1: float
    normalized: bool = field(default=False)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.int64).reshape(-1)
        y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        p = np.asarray(self.p, dtype=np.int8).reshape(-1)
        t = np.asarray(self.t, dtype=np.float64 if self.normalized else np.int64).reshape(-1)
        n = len(x)
        if not (len(y) == len(t) == len(p) == n):
            raise ValueError("x, y, t, p must have equal length")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor geometry must be positive")
        if n:
            if x.min() < 0 or x.max() >= self.width or y.min() < 0 or y.max() >= self.height:
                raise ValueError("coordinate out of bounds")
            if not np.all(np.abs(p) == 1):
                raise ValueError("polarity must be -1 or +1")
            if np.any(np.diff(t) < 0):
                raise ValueError("events must be sorted by timestamp")
            if t[0] < self.t0 or t[-1] > self.t1:
                raise ValueError("event timestamp outside [t0, t1]")
        if self.t1 < self.t0:
            raise ValueError("t1 must not precede t0")
        for name, arr in (("x", x), ("y", y), ("t", t), ("p", p)):
            object.__setattr__(self, name, _frozen(arr))

    @classmethod
    def from_arrays(cls, x, y, t, p, width: int, height: int, t0=None, t1=None,
                    normalized: bool = False) -> "EventVolume":
        """Build a volume from unsorted arrays; events are stably sorted by t.

        Window bounds default to the min/max timestamp (0/0 when empty).
        """
        t = np.asarray(t)
        order = np.argsort(t, kind="stable")
        t = t[order]
        if t0 is None:
            t0 = t[0] if len(t) else 0
        if t1 is None:
            t1 = t[-1] if len(t) else t0
        cast = float if normalized else int
        return cls(np.asarray(x)[order], np.asarray(y)[order], t, np.asarray(p)[order],
                   int(width), int(height), cast(t0), cast(t1), normalized)

    @classmethod
    def from_events(cls, events: Iterable[Event], width: int, height: int, **kwargs) -> "EventVolume":
        events = list(events)
        cols = list(zip(*events)) if events else [(), (), (), ()]
        return cls.from_arrays(*cols, width=width, height=height, **kwargs)

    @classmethod
    def empty(cls, width: int, height: int) -> "EventVolume":
        return cls.from_arrays([], [], [], [], width, height)

    def __len__(self) -> int:
        return len(self.x)

    def __iter__(self) -> Iterator[Event]:
        for x, y, t, p in zip(self.x.tolist(), self.y.tolist(), self.t.tolist(), self.p.tolist()):
            yield Event(x, y, t, p)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventVolume):
            return NotImplemented
        return (
            (self.width, self.height, self.t0, self.t1, self.normalized)
            == (other.width, other.height, other.t0, other.t1, other.normalized)
            and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in "xytp")
        )

    __hash__ = None

    def select(self, mask: np.ndarray) -> "EventVolume":
        """Subset of events, keeping geometry and window bounds."""
        return EventVolume(self.x[mask], self.y[mask], self.t[mask], self.p[mask],
                           self.width, self.height, self.t0, self.t1, self.normalized)


@dataclass(frozen=True)
class CountImage:
    pos: np.ndarray
    neg: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.pos + self.neg


def event_count_image(vol: EventVolume) -> CountImage:
    """Per-polarity event histogram (integer counts, shape H x W)."""
    n_px = vol.width * vol.height
    idx = vol.y * vol.width + vol.x
    pos = np.bincount(idx[vol.p > 0], minlength=n_px).reshape(vol.height, vol.width)
    neg = np.bincount(idx[vol.p < 0], minlength=n_px).reshape(vol.height, vol.width)
    return CountImage(pos.astype(np.int64), neg.astype(np.int64))


def normalize_window(vol: EventVolume) -> EventVolume:
    """Affinely map timestamps to [0, 1] using the window bounds."""
    if vol.normalized:
        return vol
    t = vol.t.astype(np.float64)
    span = vol.t1 - vol.t0
    if span == 0:
        if len(np.unique(vol.t)) > 1:
            raise ValueError("zero-length window with distinct timestamps")
        tn = np.zeros_like(t)
    else:
        # integer subtraction first keeps large microsecond stamps exact
        tn = (vol.t - vol.t0).astype(np.float64) / float(span)
    return EventVolume(vol.x, vol.y, tn, vol.p, vol.width, vol.height, 0.0, 1.0, normalized=True)


def parse_event_file(path: PathLike) -> EventVolume:
    """Read an event text file.

    Format: optional header ``# w=<W> h=<H>``, then ``t,x,y,p`` lines with
    p in {0, 1}. Without a header the geometry is the bounding box of the
    events. Unsorted input is stably sorted.

    Raises:
        EventFormatError: malformed line or coordinate out of bounds.
    """
    text = Path(path).read_text()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    width = height = None
    start = 0
    if lines and lines[0].startswith("#"):
        m = _HEADER_RE.fullmatch(lines[0].strip())
        if m is None:
            raise EventFormatError("malformed header", line=1)
        width, height = int(m.group(1)), int(m.group(2))
        start = 1

    n = len(lines) - start
    cols = np.empty((n, 4), dtype=np.int64)
    match = _LINE_RE.fullmatch
    for i in range(n):
        m = match(lines[start + i])
        if m is None:
            raise EventFormatError(f"malformed event {lines[start + i]!r}", line=start + i + 1)
        cols[i] = m.groups()
    t, x, y, p = cols.T

    if width is None:
        width = int(x.max()) + 1 if n else 1
        height = int(y.max()) + 1 if n else 1
    bad = np.flatnonzero((x >= width) | (y >= height))
    if len(bad):
        raise EventFormatError("coordinate out of bounds", line=start + int(bad[0]) + 1)
    return EventVolume.from_arrays(x, y, t, np.where(p > 0, 1, -1), width, height)


def write_event_file(vol: EventVolume, path: PathLike) -> None:
    """Write a raw (microsecond) volume in the text event format."""
    if vol.normalized:
        raise ValueError("cannot write a normalized volume; timestamps must be integer microseconds")
    order = np.argsort(vol.t, kind="stable")
    p01 = (vol.p[order] > 0).astype(np.int64)
    rows = zip(vol.t[order].tolist(), vol.x[order].tolist(), vol.y[order].tolist(), p01.tolist())
    body = "".join(f"{t},{x},{y},{p}\n" for t, x, y, p in rows)
    with open(path, "w", newline="\n") as f:
        f.write(f"# w={vol.width} h={vol.height}\n")
        f.write(body)
