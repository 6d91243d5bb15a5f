"""Preprocessing chain and evaluation against simulator ground truth."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigError, GeometryError, InsufficientDataError
from .events import DEFAULT_K_MIN, DEFAULT_R_T, DEFAULT_R_XY, EventStream, denoise_radius, undistort_events
from .geometry import (
    RigidExtrinsics,
    direction_error_deg,
    rotation_error_deg,
    triangulate_many,
    umeyama_align,
)
from .simulator import GroundTruth
from .trajectory import DEFAULT_BORDER, DEFAULT_N_MIN, DEFAULT_WINDOW, Trajectory2D, extract_centroids
from .sync import correspondences


@dataclass(frozen=True)
class PreprocessConfig:
    denoise: bool = True
    r_xy: int = DEFAULT_R_XY
    r_t: int = DEFAULT_R_T
    k_min: int = DEFAULT_K_MIN
    window: int = DEFAULT_WINDOW
    n_min: int = DEFAULT_N_MIN
    border_margin: float = DEFAULT_BORDER

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown preprocess options: {sorted(unknown)}")
        return cls(**d)


def preprocess(stream: EventStream, cfg: PreprocessConfig = PreprocessConfig()) -> tuple[Trajectory2D, dict]:
    """denoise -> undistort -> centroid extraction; also returns per-stage counts and timings."""
    t0 = time.perf_counter()
    clean = denoise_radius(stream, cfg.r_xy, cfg.r_t, cfg.k_min) if cfg.denoise else stream
    t1 = time.perf_counter()
    und = undistort_events(clean)
    t2 = time.perf_counter()
    traj = extract_centroids(und, stream.camera, cfg.window, cfg.n_min, cfg.border_margin)
    t3 = time.perf_counter()
    stats = {
        "n_events": len(stream),
        "n_denoised": len(clean),
        "n_undistort_dropped": und.dropped,
        "n_windows": len(traj),
        "n_valid": int(traj.valid.sum()),
        "runtime": {"denoise_s": t1 - t0, "undistort_s": t2 - t1, "centroids_s": t3 - t2},
    }
    return traj, stats


@dataclass
class EvaluationReport:
    t_d_error: float  # ms
    rotation_error: float | None = None  # deg
    translation_direction_error: float | None = None  # deg
    trajectory_rmse: float | None = None  # m, after similarity alignment
    n_triangulated: int | None = None
    runtime: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def reconstruct(
    traj1: Trajectory2D, traj2: Trajectory2D, ext: RigidExtrinsics, t_d: float, max_gap: float
) -> tuple[np.ndarray, np.ndarray]:
    """Triangulate matched centroids in the camera-1 frame; returns (t_i, points) for the well-conditioned ones."""
    if traj1.camera is None or traj2.camera is None:
        raise ConfigError("trajectories need camera models for triangulation")
    ti, p1, p2 = correspondences(traj1, traj2, t_d, max_gap)
    pts, ok = triangulate_many(traj1.camera, RigidExtrinsics.identity(), traj2.camera, ext.unit(), p1, p2)
    return ti[ok], pts[ok]


def trajectory_rmse(
    traj1: Trajectory2D, traj2: Trajectory2D, ext: RigidExtrinsics, t_d: float, truth: GroundTruth, max_gap: float
) -> tuple[float, int]:
    ti, pts = reconstruct(traj1, traj2, ext, t_d, max_gap)
    keep = (ti >= truth.spline.knots[0]) & (ti <= truth.spline.knots[-1])
    ti, pts = ti[keep], pts[keep]
    if len(ti) < 3:
        raise InsufficientDataError("fewer than 3 triangulated points to align")
    sim = umeyama_align(pts, truth.points3d(ti))
    return sim.rmse, len(ti)


def evaluate(
    report: dict,
    truth: GroundTruth,
    traj1: Trajectory2D | None = None,
    traj2: Trajectory2D | None = None,
    max_gap: float | None = None,
) -> EvaluationReport:
    """Compare a sync report (as written by ``write_report``) with ground truth."""
    start = time.perf_counter()
    try:
        t_star = float(report["t_d_star_us"])
    except KeyError:
        raise ConfigError("report lacks t_d_star_us") from None
    out = EvaluationReport(t_d_error=abs(t_star - truth.injected_offset) / 1000.0)
    ext = None
    if "R" in report and "t" in report:
        ext = RigidExtrinsics(np.array(report["R"], dtype=float), np.array(report["t"], dtype=float))
        out.rotation_error = rotation_error_deg(ext.rotation, truth.extrinsics.rotation)
        out.translation_direction_error = direction_error_deg(ext.translation, truth.extrinsics.translation)
    if ext is not None and traj1 is not None and traj2 is not None:
        if max_gap is None:
            max_gap = report.get("config", {}).get("max_gap", 20_000)
        try:
            out.trajectory_rmse, out.n_triangulated = trajectory_rmse(traj1, traj2, ext, t_star, truth, max_gap)
        except GeometryError:
            out.trajectory_rmse, out.n_triangulated = None, 0
    out.runtime = {"evaluate_s": time.perf_counter() - start}
    return out
