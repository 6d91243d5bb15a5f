"""Time-offset search by minimizing the mean point-to-epipolar-line distance.

Offset convention: the camera-2 sample matched with camera-1 time ``t`` is
taken at camera-2 time ``t + t_d``. A scenario whose second stream was
shifted by ``+offset`` is therefore recovered at ``t_d = +offset``.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from .camera import CameraModel
from .errors import (
    ConfigError,
    DegeneracyError,
    EventFileError,
    NoOverlapError,
    OffsetOutOfRangeError,
)
from .geometry import (
    RigidExtrinsics,
    compose_fundamental,
    decompose_to_extrinsics,
    epipolar_distances,
    estimate_fundamental_lmeds,
)
from .trajectory import DEFAULT_MAX_GAP, Trajectory2D, sample

KNOWN = "known-extrinsics"
ESTIMATED = "estimated-extrinsics"
TIE_TOL = 1e-12

# sample-time schemes for the camera-1 side of each correspondence
CENTROIDS = "centroids"  # the valid camera-1 window centers
GOLDEN = "golden"  # a grid of spacing window * (sqrt(5) - 1) / 2 over the camera-1 span
_GOLDEN_FRACTION = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SearchConfig:
    t_begin: int = -1_000_000
    t_end: int = 1_000_000
    coarse_step: int = 10_000
    refine_levels: int = 3
    refine_factor: int = 10
    min_step: int = 50
    min_samples: int = 20
    symmetric_distance: bool = False
    seed: int = 0
    max_gap: float = DEFAULT_MAX_GAP
    lmeds_iterations: int = 500
    sampling: str = GOLDEN

    def __post_init__(self):
        if not self.t_begin < self.t_end:
            raise ConfigError(f"t_begin ({self.t_begin}) must be < t_end ({self.t_end})")
        if self.coarse_step <= 0 or self.min_step <= 0:
            raise ConfigError("steps must be positive")
        if self.refine_factor < 2:
            raise ConfigError("refine_factor must be >= 2")
        if self.refine_levels < 0:
            raise ConfigError("refine_levels must be >= 0")
        if self.min_samples < 8:
            raise ConfigError("min_samples must be >= 8")
        if not self.max_gap > 0:
            raise ConfigError("max_gap must be positive")
        if self.sampling not in (CENTROIDS, GOLDEN):
            raise ConfigError(f"sampling must be {CENTROIDS!r} or {GOLDEN!r}, got {self.sampling!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown search options: {sorted(unknown)}")
        return cls(**d)

    def steps(self) -> list[int]:
        """Grid step per level, e.g. 10 ms -> 1 ms -> 0.1 ms -> 0.05 ms."""
        out = [int(self.coarse_step)]
        for _ in range(self.refine_levels):
            nxt = max(out[-1] // self.refine_factor, int(self.min_step))
            if nxt >= out[-1]:
                break
            out.append(nxt)
        return out


@dataclass(frozen=True, eq=False)
class DAvgCurve:
    """One refinement level; ``d_avg`` is NaN (and ``n_used`` 0) where the candidate was unusable."""

    level: int
    step: int
    t_d: np.ndarray
    d_avg: np.ndarray
    n_used: np.ndarray


@dataclass(eq=False)
class SyncResult:
    t_d_star: int
    d_avg_min: float
    curve: list[DAvgCurve]
    fundamental: np.ndarray
    extrinsics: RigidExtrinsics
    mode: str
    n_correspondences: int
    config: SearchConfig
    n_inliers: int | None = None
    runtime: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# objective


def sample_times(traj1: Trajectory2D, sampling: str = GOLDEN) -> np.ndarray:
    """Camera-1 times t_i at which both trajectories are compared.

    With ``CENTROIDS`` the t_i are the valid window centers, so p1 is a raw
    centroid while p2 is interpolated. Interpolating between two noisy
    centroids lowers the noise by up to half midway between them, which makes
    d_avg ripple with the window period and drags the minimum toward the
    half-window phase. The ``GOLDEN`` grid spaces t_i by an irrational
    fraction of the window, so for every t_d the interpolation phases of both
    cameras are spread evenly and the ripple averages out.
    """
    if sampling == CENTROIDS or len(traj1) == 0:
        return traj1.valid_t
    step = traj1.window * _GOLDEN_FRACTION
    n = int(np.floor((traj1.t[-1] - traj1.t[0]) / step)) + 1
    return traj1.t[0] + step * np.arange(n)


def correspondences(
    traj1: Trajectory2D,
    traj2: Trajectory2D,
    t_d: float,
    max_gap: float = DEFAULT_MAX_GAP,
    times: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pairs (p1(t_i), p2(t_i + t_d)); ``times`` defaults to the valid camera-1 centroid times.

    Returns (t_i, p1, p2) restricted to times where both trajectories can be sampled.
    """
    ti = traj1.valid_t if times is None else np.asarray(times, dtype=float)
    p1 = sample(traj1, ti, max_gap)
    p2 = sample(traj2, ti + t_d, max_gap)
    ok = ~np.isnan(p1[:, 0]) & ~np.isnan(p2[:, 0])
    return ti[ok], p1[ok], p2[ok]


def d_avg(
    traj1: Trajectory2D, traj2: Trajectory2D, f: np.ndarray, t_d: float, cfg: SearchConfig = SearchConfig()
) -> tuple[float, int] | None:
    """Mean distance of p1(t_i) to the epipolar line of p2(t_i + t_d); None if too few samples."""
    _, p1, p2 = correspondences(traj1, traj2, t_d, cfg.max_gap, sample_times(traj1, cfg.sampling))
    return _mean_distance(f, p1, p2, cfg)


def _mean_distance(f, p1, p2, cfg):
    if len(p1) < cfg.min_samples:
        return None
    d = epipolar_distances(f, p1, p2, symmetric=cfg.symmetric_distance)
    d = d[np.isfinite(d)]
    if len(d) < cfg.min_samples:
        return None
    return float(d.mean()), int(len(d))


def _candidate_seed(seed: int, t_d: int) -> list[int]:
    return [int(seed), abs(int(t_d)), int(t_d < 0)]


# ---------------------------------------------------------------------------
# coarse-to-fine search


def _argmin(t_d: np.ndarray, d: np.ndarray) -> int | None:
    ok = np.isfinite(d)
    if not ok.any():
        return None
    dmin = d[ok].min()
    ties = np.flatnonzero(ok & (d <= dmin + TIE_TOL))
    # smallest |t_d| wins, then the smaller t_d
    return int(min(ties, key=lambda i: (abs(int(t_d[i])), int(t_d[i]))))


def coarse_to_fine(objective, cfg: SearchConfig) -> tuple[int, float, list[DAvgCurve]]:
    """Minimize ``objective(t_d) -> float | None`` on the configured grid schedule."""
    steps = cfg.steps()
    levels: list[DAvgCurve] = []
    cache: dict[int, float] = {}

    def evaluate(grid):
        vals = []
        for td in grid:
            td = int(td)
            if td not in cache:
                v = objective(td)
                cache[td] = (math.nan, 0) if v is None else v
            vals.append(cache[td])
        d = np.array([v[0] for v in vals], dtype=float)
        n = np.array([v[1] for v in vals], dtype=np.int64)
        return d, n

    step0 = steps[0]
    grid = np.arange(cfg.t_begin, cfg.t_end + 1, step0, dtype=np.int64)
    d, n = evaluate(grid)
    best = _argmin(grid, d)
    if best is None:
        levels.append(DAvgCurve(0, step0, grid, d, n))
        raise NoOverlapError("no candidate offset has enough overlapping samples")
    if best in (0, len(grid) - 1):
        # minimum on the boundary: look one coarse step further before refining
        extra = grid[best] - step0 if best == 0 else grid[best] + step0
        de, ne = evaluate([extra])
        if np.isfinite(de[0]) and de[0] < d[best] - TIE_TOL:
            raise OffsetOutOfRangeError(
                f"d_avg still decreasing beyond the search boundary at {int(extra)} us; widen [t_begin, t_end]"
            )
        if best == 0:
            grid, d, n = np.r_[extra, grid], np.r_[de, d], np.r_[ne, n]
            best += 1
        else:
            grid, d, n = np.r_[grid, extra], np.r_[d, de], np.r_[n, ne]
    levels.append(DAvgCurve(0, step0, grid, d, n))
    center = int(grid[best])
    prev = step0
    for lvl, step in enumerate(steps[1:], start=1):
        k = int(math.ceil(prev / step))
        grid = center + step * np.arange(-k, k + 1, dtype=np.int64)
        grid = grid[(grid >= cfg.t_begin) & (grid <= cfg.t_end)]
        d, n = evaluate(grid)
        levels.append(DAvgCurve(lvl, step, grid, d, n))
        best = _argmin(grid, d)
        if best is not None:
            center = int(grid[best])
        prev = step
    final = levels[-1]
    i = _argmin(final.t_d, final.d_avg)
    return int(final.t_d[i]), float(final.d_avg[i]), levels


def _check_inputs(traj1: Trajectory2D, traj2: Trajectory2D):
    if len(traj1) == 0 or len(traj2) == 0 or not traj1.valid.any() or not traj2.valid.any():
        raise NoOverlapError("empty trajectory")


def sync_known_extrinsics(
    traj1: Trajectory2D,
    traj2: Trajectory2D,
    k1: CameraModel,
    k2: CameraModel,
    ext: RigidExtrinsics,
    cfg: SearchConfig = SearchConfig(),
) -> SyncResult:
    """Offset search with F composed from known intrinsics and extrinsics."""
    _check_inputs(traj1, traj2)
    start = time.perf_counter()
    f = compose_fundamental(k1, k2, ext)
    times = sample_times(traj1, cfg.sampling)

    def objective(td):
        _, p1, p2 = correspondences(traj1, traj2, td, cfg.max_gap, times)
        return _mean_distance(f, p1, p2, cfg)

    t_star, d_min, levels = coarse_to_fine(objective, cfg)
    _, p1, _ = correspondences(traj1, traj2, t_star, cfg.max_gap, times)
    return SyncResult(
        t_d_star=t_star,
        d_avg_min=d_min,
        curve=levels,
        fundamental=f,
        extrinsics=ext.unit(),
        mode=KNOWN,
        n_correspondences=len(p1),
        config=cfg,
        runtime={"search_s": time.perf_counter() - start},
    )


def estimate_at_offset(traj1, traj2, t_d: int, cfg: SearchConfig):
    """LMedS fundamental matrix for the pairs at ``t_d``; returns (F, p1, p2, inlier_mask) or None."""
    _, p1, p2 = correspondences(traj1, traj2, t_d, cfg.max_gap, sample_times(traj1, cfg.sampling))
    if len(p1) < cfg.min_samples:
        return None
    f, mask = estimate_fundamental_lmeds(
        p1, p2, rng_seed=_candidate_seed(cfg.seed, t_d), iterations=cfg.lmeds_iterations
    )
    return f, p1, p2, mask


def sync_unknown_extrinsics(
    traj1: Trajectory2D,
    traj2: Trajectory2D,
    k1: CameraModel,
    k2: CameraModel,
    cfg: SearchConfig = SearchConfig(),
) -> SyncResult:
    """Offset search re-estimating F at every candidate; pose recovered from F(t_d*)."""
    _check_inputs(traj1, traj2)
    start = time.perf_counter()
    degenerate = []

    def objective(td):
        try:
            est = estimate_at_offset(traj1, traj2, td, cfg)
        except DegeneracyError:
            degenerate.append(td)
            return None
        if est is None:
            return None
        f, p1, p2, _ = est
        return _mean_distance(f, p1, p2, cfg)

    try:
        t_star, d_min, levels = coarse_to_fine(objective, cfg)
    except NoOverlapError:
        if degenerate:
            raise DegeneracyError(
                "fundamental matrix estimation is degenerate at every candidate offset "
                "(trajectory too close to a planar/straight configuration)"
            ) from None
        raise
    search_s = time.perf_counter() - start
    f, p1, p2, mask = estimate_at_offset(traj1, traj2, t_star, cfg)
    ext = decompose_to_extrinsics(f, k1, k2, p1[mask], p2[mask])
    return SyncResult(
        t_d_star=t_star,
        d_avg_min=d_min,
        curve=levels,
        fundamental=f,
        extrinsics=ext,
        mode=ESTIMATED,
        n_correspondences=len(p1),
        config=cfg,
        n_inliers=int(mask.sum()),
        runtime={"search_s": search_s, "decompose_s": time.perf_counter() - start - search_s},
    )


# ---------------------------------------------------------------------------
# output


def report_dict(result: SyncResult) -> dict:
    return {
        "mode": result.mode,
        "t_d_star_us": int(result.t_d_star),
        "t_d_star_ms": result.t_d_star / 1000.0,
        "d_avg_min": result.d_avg_min,
        "F": result.fundamental.tolist(),
        "R": result.extrinsics.rotation.tolist(),
        "t": result.extrinsics.translation.tolist(),
        "n_correspondences": int(result.n_correspondences),
        "n_inliers": result.n_inliers,
        "config": asdict(result.config),
        "runtime": result.runtime,
    }


def write_report(result: SyncResult, path, extra: dict | None = None) -> dict:
    rep = report_dict(result)
    if extra:
        rep.update(extra)
    try:
        Path(path).write_text(json.dumps(rep, indent=2) + "\n")
    except OSError as exc:
        raise EventFileError(f"cannot write report {path}: {exc}") from exc
    return rep


def curve_frame(result: SyncResult) -> pd.DataFrame:
    rows = []
    for lvl in result.curve:
        rows.append(
            pd.DataFrame({"level": lvl.level, "t_d_us": lvl.t_d, "d_avg_px": lvl.d_avg, "n": lvl.n_used})
        )
    return pd.concat(rows, ignore_index=True)


def write_curve(result: SyncResult, path) -> None:
    try:
        curve_frame(result).to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
    except OSError as exc:
        raise EventFileError(f"cannot write curve {path}: {exc}") from exc


def read_report(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise EventFileError(f"cannot read report {path}: {exc}") from exc
