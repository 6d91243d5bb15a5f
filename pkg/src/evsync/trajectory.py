"""Object centroid trajectories from undistorted events."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .camera import CameraModel
from .errors import ConfigError, EventFileError
from .events import UndistortedEvents

DEFAULT_WINDOW = 5_000  # us
DEFAULT_N_MIN = 10
DEFAULT_BORDER = 5.0  # px
DEFAULT_MAX_GAP = 20_000  # us


@dataclass(frozen=True, eq=False)
class Trajectory2D:
    """Per-window centroids. ``t`` holds window centers in microseconds (camera clock)."""

    t: np.ndarray
    uv: np.ndarray
    n_events: np.ndarray
    valid: np.ndarray
    window: float
    camera: CameraModel | None = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        uv = np.asarray(self.uv, dtype=float).reshape(-1, 2)
        n = np.asarray(self.n_events, dtype=np.int64).reshape(-1)
        valid = np.asarray(self.valid, dtype=bool).reshape(-1)
        if not (len(t) == len(uv) == len(n) == len(valid)):
            raise ConfigError("trajectory columns differ in length")
        if np.any(np.diff(t) <= 0):
            raise ConfigError("trajectory timestamps must be strictly increasing")
        if not self.window > 0:
            raise ConfigError("window must be positive")
        for name, a in (("t", t), ("uv", uv), ("n_events", n), ("valid", valid)):
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def valid_t(self) -> np.ndarray:
        return self.t[self.valid]

    @property
    def span(self) -> tuple[float, float] | None:
        tv = self.valid_t
        if len(tv) == 0:
            return None
        return float(tv[0]), float(tv[-1])

    def shifted(self, dt: float) -> "Trajectory2D":
        return Trajectory2D(self.t + dt, self.uv, self.n_events, self.valid, self.window, self.camera)


def extract_centroids(
    events: UndistortedEvents,
    camera: CameraModel,
    window: float = DEFAULT_WINDOW,
    n_min: int = DEFAULT_N_MIN,
    border_margin: float = DEFAULT_BORDER,
    t_start: float | None = None,
) -> Trajectory2D:
    """Mean event position in consecutive non-overlapping windows.

    Window k covers [t_start + k w, t_start + (k+1) w) and is stamped at its
    midpoint. Windows with fewer than ``n_min`` events, or whose centroid lies
    within ``border_margin`` px of an image edge, are marked invalid.
    """
    if not window > 0:
        raise ConfigError("window must be positive")
    if len(events.t) == 0:
        return Trajectory2D(np.zeros(0), np.zeros((0, 2)), np.zeros(0), np.zeros(0, bool), window, camera)
    t = events.t.astype(np.int64)
    t0 = float(t[0]) if t_start is None else float(t_start)
    k = np.floor((t - t0) / window).astype(np.int64)
    keep = k >= 0
    k = k[keep]
    uv = events.uv[keep]
    n_win = int(k.max()) + 1 if len(k) else 0
    counts = np.bincount(k, minlength=n_win)
    su = np.bincount(k, weights=uv[:, 0], minlength=n_win)
    sv = np.bincount(k, weights=uv[:, 1], minlength=n_win)
    with np.errstate(invalid="ignore", divide="ignore"):
        cu = su / counts
        cv = sv / counts
    centers = t0 + (np.arange(n_win) + 0.5) * window
    cuv = np.stack([cu, cv], axis=1)
    inside = (
        (cu >= border_margin)
        & (cu <= camera.width - 1 - border_margin)
        & (cv >= border_margin)
        & (cv <= camera.height - 1 - border_margin)
    )
    valid = (counts >= n_min) & inside
    return Trajectory2D(centers, cuv, counts, valid, window, camera)


def sample(traj: Trajectory2D, times, max_gap: float = DEFAULT_MAX_GAP) -> np.ndarray:
    """Linear interpolation at ``times``; rows are NaN where no value exists.

    A value exists when ``t`` hits a valid knot exactly, or when both knots
    bracketing ``t`` are valid and at most ``max_gap`` apart.
    """
    if not max_gap > 0:
        raise ConfigError("max_gap must be positive")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    out = np.full((len(times), 2), np.nan)
    n = len(traj)
    if n == 0:
        return out
    tk = traj.t
    hi = np.searchsorted(tk, times, side="left")
    exact = (hi < n) & (tk[np.minimum(hi, n - 1)] == times)
    ex_idx = hi[exact]
    ok_exact = traj.valid[ex_idx]
    out[np.flatnonzero(exact)[ok_exact]] = traj.uv[ex_idx[ok_exact]]
    interior = ~exact & (hi > 0) & (hi < n)
    idx = np.flatnonzero(interior)
    if len(idx):
        j1 = hi[idx]
        j0 = j1 - 1
        ta, tb = tk[j0], tk[j1]
        good = traj.valid[j0] & traj.valid[j1] & (tb - ta <= max_gap)
        idx, j0, j1, ta, tb = idx[good], j0[good], j1[good], ta[good], tb[good]
        w = ((times[idx] - ta) / (tb - ta))[:, None]
        out[idx] = (1.0 - w) * traj.uv[j0] + w * traj.uv[j1]
    return out


def sample_one(traj: Trajectory2D, t: float, max_gap: float = DEFAULT_MAX_GAP):
    """Scalar form of :func:`sample`; returns ``None`` when absent."""
    p = sample(traj, [t], max_gap)[0]
    return None if np.isnan(p[0]) else (float(p[0]), float(p[1]))


def overlap_span(traj1: Trajectory2D, traj2: Trajectory2D, t_d: float) -> tuple[float, float] | None:
    """Camera-1 interval where traj1 and traj2(t + t_d) both have valid coverage."""
    s1 = traj1.span
    s2 = traj2.span
    if s1 is None or s2 is None:
        return None
    lo = max(s1[0], s2[0] - t_d)
    hi = min(s1[1], s2[1] - t_d)
    if lo > hi:
        return None
    return lo, hi


def save_trajectory(traj: Trajectory2D, path) -> None:
    df = pd.DataFrame(
        {
            "t_us": traj.t,
            "u": traj.uv[:, 0],
            "v": traj.uv[:, 1],
            "n_events": traj.n_events,
            "valid": traj.valid.astype(int),
        }
    )
    df.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")


def load_trajectory(path, camera: CameraModel | None = None, window: float | None = None) -> Trajectory2D:
    try:
        df = pd.read_csv(Path(path), float_precision="round_trip")
    except (OSError, ValueError) as exc:
        raise EventFileError(f"cannot read trajectory {path}: {exc}") from exc
    t = df["t_us"].to_numpy(float)
    if window is None:
        window = float(np.median(np.diff(t))) if len(t) > 1 else DEFAULT_WINDOW
    return Trajectory2D(
        t, df[["u", "v"]].to_numpy(float), df["n_events"].to_numpy(), df["valid"].to_numpy() != 0, window, camera
    )
