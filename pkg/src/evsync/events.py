"""Event streams: storage, CSV I/O, offset injection, denoising, undistortion."""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import _kernels
from .camera import CameraModel
from .errors import BoundsError, ConfigError, EventFileError, ShiftUnderflowError, TimestampOrderError

HEADER = "t_us,x,y,p"

# denoising defaults: 3 px Chebyshev radius, +-10 ms window
DEFAULT_R_XY = 3
DEFAULT_R_T = 10_000
DEFAULT_K_MIN = 10


@dataclass(frozen=True)
class Event:
    t: int
    x: int
    y: int
    polarity: int


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-sorted events of one camera, stored column-wise.

    ``t`` is int64 microseconds on the camera's own clock, ``x``/``y`` integer
    pixel indices, ``p`` polarity in {-1, +1}. Arrays are read-only.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    camera: CameraModel

    def __post_init__(self):
        cols = {}
        for name, dtype in (("t", np.int64), ("x", np.int32), ("y", np.int32), ("p", np.int8)):
            a = np.ascontiguousarray(getattr(self, name), dtype=dtype).reshape(-1)
            a.flags.writeable = False
            cols[name] = a
        n = len(cols["t"])
        if any(len(a) != n for a in cols.values()):
            raise ConfigError("event columns differ in length")
        for name, a in cols.items():
            object.__setattr__(self, name, a)

    @classmethod
    def empty(cls, camera: CameraModel) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, camera)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def select(self, mask) -> "EventStream":
        return EventStream(self.t[mask], self.x[mask], self.y[mask], self.p[mask], self.camera)

    def validate(self) -> None:
        if len(self) == 0:
            return
        if np.any(np.diff(self.t) < 0):
            raise TimestampOrderError("timestamps are not non-decreasing")
        if self.t[0] < 0:
            raise BoundsError("negative timestamp")
        oob = (self.x < 0) | (self.x >= self.camera.width) | (self.y < 0) | (self.y >= self.camera.height)
        if oob.any():
            raise BoundsError(f"event {int(np.argmax(oob))} outside the {self.camera.width}x{self.camera.height} sensor")

    def equals(self, other: "EventStream") -> bool:
        return all(np.array_equal(getattr(self, c), getattr(other, c)) for c in "txyp")

    @property
    def span(self) -> tuple[int, int] | None:
        if len(self) == 0:
            return None
        return int(self.t[0]), int(self.t[-1])


def merge_sorted(streams: list[EventStream]) -> EventStream:
    """Stable time-merge of streams sharing one camera."""
    t = np.concatenate([s.t for s in streams])
    order = np.argsort(t, kind="stable")
    cat = lambda c: np.concatenate([getattr(s, c) for s in streams])[order]  # noqa: E731
    return EventStream(t[order], cat("x"), cat("y"), cat("p"), streams[0].camera)


# ---------------------------------------------------------------------------
# CSV I/O


def save_events(stream: EventStream, path) -> None:
    df = pd.DataFrame(
        {"t_us": stream.t, "x": stream.x, "y": stream.y, "p": (stream.p > 0).astype(np.int8)}
    )
    try:
        df.to_csv(path, index=False, lineterminator="\n")
    except OSError as exc:
        raise EventFileError(f"cannot write {path}: {exc}") from exc


def _scan_for_parse_error(path) -> str:
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if lineno == 1:
                continue
            parts = line.strip().split(",")
            if len(parts) != 4:
                return f"line {lineno}: expected 4 fields, got {len(parts)}"
            try:
                vals = [int(v) for v in parts]
            except ValueError:
                return f"line {lineno}: non-integer field in {line.strip()!r}"
            if vals[3] not in (0, 1):
                return f"line {lineno}: polarity must be 0 or 1, got {vals[3]}"
    return "unparseable file"


def load_events(path, camera: CameraModel) -> EventStream:
    """Read an event CSV (``t_us,x,y,p`` with p in {0,1}) and validate it against ``camera``."""
    path = Path(path)
    try:
        with open(path) as fh:
            header = fh.readline().strip()
    except OSError as exc:
        raise EventFileError(f"cannot read {path}: {exc}") from exc
    if header != HEADER:
        raise EventFileError(f"{path}: line 1: expected header {HEADER!r}, got {header!r}")
    try:
        df = pd.read_csv(path, dtype=np.int64, skip_blank_lines=True)
    except (ValueError, pd.errors.ParserError):
        raise EventFileError(f"{path}: {_scan_for_parse_error(path)}") from None
    t = df["t_us"].to_numpy()
    x = df["x"].to_numpy()
    y = df["y"].to_numpy()
    p = df["p"].to_numpy()
    bad_p = (p != 0) & (p != 1)
    if bad_p.any():
        i = int(np.argmax(bad_p))
        raise EventFileError(f"{path}: line {i + 2}: polarity must be 0 or 1, got {p[i]}")
    oob = (x < 0) | (x >= camera.width) | (y < 0) | (y >= camera.height) | (t < 0)
    if oob.any():
        i = int(np.argmax(oob))
        raise BoundsError(
            f"{path}: line {i + 2}: event (t={t[i]}, x={x[i]}, y={y[i]}) outside "
            f"{camera.width}x{camera.height} sensor or before t=0"
        )
    dec = np.diff(t) < 0
    if dec.any():
        i = int(np.argmax(dec)) + 1
        raise TimestampOrderError(f"{path}: line {i + 2}: timestamp {t[i]} precedes {t[i - 1]}")
    return EventStream(t, x, y, np.where(p > 0, 1, -1), camera)


def events_to_csv_bytes(stream: EventStream) -> bytes:
    buf = io.StringIO()
    pd.DataFrame(
        {"t_us": stream.t, "x": stream.x, "y": stream.y, "p": (stream.p > 0).astype(np.int8)}
    ).to_csv(buf, index=False, lineterminator="\n")
    return buf.getvalue().encode()


# ---------------------------------------------------------------------------
# transforms


def apply_offset(stream: EventStream, t_d: int) -> EventStream:
    """Shift every timestamp by ``t_d`` microseconds."""
    t_d = int(t_d)
    if len(stream) and stream.t[0] + t_d < 0:
        raise ShiftUnderflowError(
            f"offset {t_d} us moves the first event (t={int(stream.t[0])}) below zero"
        )
    return EventStream(stream.t + t_d, stream.x, stream.y, stream.p, stream.camera)


def denoise_radius(
    stream: EventStream,
    r_xy: int = DEFAULT_R_XY,
    r_t: int = DEFAULT_R_T,
    k_min: int = DEFAULT_K_MIN,
) -> EventStream:
    """Keep events with at least ``k_min`` other events within |dx|,|dy| <= r_xy and |dt| <= r_t."""
    if r_xy <= 0 or r_t <= 0 or k_min < 1:
        raise ConfigError(f"need r_xy > 0, r_t > 0, k_min >= 1 (got {r_xy}, {r_t}, {k_min})")
    if len(stream) == 0:
        return stream
    keep = _kernels.neighbor_filter(
        stream.t, stream.x, stream.y, stream.camera.width, stream.camera.height, int(r_xy), int(r_t), int(k_min)
    )
    return stream.select(keep)


@dataclass(frozen=True, eq=False)
class UndistortedEvents:
    """Continuous undistorted pixel coordinates for the events that converged."""

    t: np.ndarray
    uv: np.ndarray
    dropped: int


def undistort_events(stream: EventStream, max_iter: int = 10, tol: float = 1e-8) -> UndistortedEvents:
    cam = stream.camera
    if len(stream) == 0:
        return UndistortedEvents(np.zeros(0, dtype=np.int64), np.zeros((0, 2)), 0)
    # many events share a pixel; invert each distinct pixel once
    key = stream.y.astype(np.int64) * cam.width + stream.x
    uniq, inv = np.unique(key, return_inverse=True)
    px = np.stack([uniq % cam.width, uniq // cam.width], axis=1).astype(float)
    uv, ok = cam.undistort_pixels(px)
    keep = ok[inv]
    return UndistortedEvents(stream.t[keep], uv[inv][keep], int((~keep).sum()))
