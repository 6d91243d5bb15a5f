"""Synthetic two-camera scenarios: a small object on a random smooth 3-D path,
rendered as events by a statistical surrogate of an event sensor.

World frame: z up, workspace centered at ``center``. Both cameras sit at the
workspace height and look at the center; camera poses map world points into
camera coordinates (x right, y down, z forward).
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .camera import CameraModel, davis346
from .errors import ConfigError, GeometryError, VisibilityError
from .events import EventStream, apply_offset, merge_sorted, save_events
from .geometry import RigidExtrinsics, compose_fundamental, homogeneous
from .trajectory import DEFAULT_BORDER, DEFAULT_N_MIN, DEFAULT_WINDOW, Trajectory2D

US = 1_000_000


def default_camera() -> CameraModel:
    return davis346(fx=250.0, k1=-0.12, k2=0.05, p1=0.001, p2=-0.0005)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    duration: float = 10.0  # s
    view_angle: float = 90.0  # deg between optical axes
    baseline: float | None = None  # m; None -> derived from `distance`
    distance: float = 8.0  # m, camera to workspace center
    camera: CameraModel = field(default_factory=default_camera)
    injected_offset: int = 0  # us, added to camera-2 timestamps
    object_radius: float = 0.08  # m
    event_rate_gain: float = 160.0  # events per px of image motion
    noise_rate: float = 1.0  # background events per px per s
    centroid_jitter: float | None = None  # px; None -> projected radius / 2
    workspace_size: tuple = (4.0, 4.0, 2.0)  # m
    tick_rate: int = 10_000  # Hz
    knot_spacing: float = 1.0  # s

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigError("duration must be positive")
        if not 0 < self.view_angle < 180:
            raise ConfigError(f"view_angle must be in (0, 180), got {self.view_angle}")
        if self.baseline is not None and not self.baseline > 0:
            raise ConfigError("baseline must be positive")
        if not self.distance > 0:
            raise ConfigError("distance must be positive")
        if self.noise_rate < 0:
            raise ConfigError("noise_rate must be >= 0")
        if not self.object_radius > 0 or self.event_rate_gain < 0:
            raise ConfigError("object_radius must be positive and event_rate_gain non-negative")
        if US % self.tick_rate:
            raise ConfigError("tick_rate must divide 1 MHz")
        object.__setattr__(self, "workspace_size", tuple(float(v) for v in self.workspace_size))

    @property
    def effective_baseline(self) -> float:
        if self.baseline is not None:
            return float(self.baseline)
        return 2.0 * self.distance * np.sin(np.radians(self.view_angle) / 2.0)

    @property
    def duration_us(self) -> int:
        return int(round(self.duration * US))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["camera"] = self.camera.to_dict()
        d["workspace_size"] = list(self.workspace_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown scenario options: {sorted(unknown)}")
        d = dict(d)
        if "camera" in d and isinstance(d["camera"], dict):
            d["camera"] = CameraModel.from_dict(d["camera"])
        return cls(**d)


# ---------------------------------------------------------------------------
# path


@dataclass(frozen=True, eq=False)
class Spline3D:
    """Cubic Catmull-Rom curve through ``control`` at times ``knots`` (us).

    Tangents are central differences in time; the ends use reflected phantom
    points, which makes the end tangents the one-sided differences.
    """

    knots: np.ndarray
    control: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=np.int64)
        control = np.asarray(self.control, dtype=float)
        if len(control) < 4 or control.shape != (len(knots), 3):
            raise ConfigError("need >= 4 control points matching the knots")
        if np.any(np.diff(knots) <= 0):
            raise ConfigError("knot times must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "control", control)

    def _tangents(self) -> np.ndarray:
        p, t = self.control, self.knots.astype(float) / US
        m = np.empty_like(p)
        m[1:-1] = (p[2:] - p[:-2]) / (t[2:] - t[:-2])[:, None]
        m[0] = (p[1] - p[0]) / (t[1] - t[0])
        m[-1] = (p[-1] - p[-2]) / (t[-1] - t[-2])
        return m

    def _segments(self, t_us):
        t_us = np.asarray(t_us, dtype=float)
        if np.any(t_us < self.knots[0]) or np.any(t_us > self.knots[-1]):
            raise ConfigError("spline evaluated outside its knot range")
        i = np.clip(np.searchsorted(self.knots, t_us, side="right") - 1, 0, len(self.knots) - 2)
        t0 = self.knots[i].astype(float)
        h = (self.knots[i + 1] - self.knots[i]).astype(float)
        s = (t_us - t0) / h
        return i, s, h / US

    def evaluate(self, t_us) -> np.ndarray:
        i, s, h = self._segments(t_us)
        m = self._tangents()
        s2, s3 = s * s, s * s * s
        h00 = 2 * s3 - 3 * s2 + 1
        h10 = s3 - 2 * s2 + s
        h01 = -2 * s3 + 3 * s2
        h11 = s3 - s2
        p, q = self.control[i], self.control[i + 1]
        return (
            h00[:, None] * p
            + (h10 * h)[:, None] * m[i]
            + h01[:, None] * q
            + (h11 * h)[:, None] * m[i + 1]
        )

    def velocity(self, t_us) -> np.ndarray:
        """Derivative in m/s."""
        i, s, h = self._segments(t_us)
        m = self._tangents()
        s2 = s * s
        d00 = 6 * s2 - 6 * s
        d10 = 3 * s2 - 4 * s + 1
        d01 = -6 * s2 + 6 * s
        d11 = 3 * s2 - 2 * s
        p, q = self.control[i], self.control[i + 1]
        return (
            (d00 / h)[:, None] * p + d10[:, None] * m[i] + (d01 / h)[:, None] * q + d11[:, None] * m[i + 1]
        )

    def to_dict(self) -> dict:
        return {"knots_us": self.knots.tolist(), "control_points": self.control.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Spline3D":
        return cls(np.array(d["knots_us"]), np.array(d["control_points"]))


def generate_spline(seed, duration: float, center=(0.0, 0.0, 0.0), size=(4.0, 4.0, 2.0), spacing: float = 1.0) -> Spline3D:
    """Random path through uniform control points in the workspace box, one per ``spacing`` seconds."""
    size = np.asarray(size, dtype=float)
    if np.any(size <= 0):
        raise ConfigError("workspace bounds must be non-degenerate")
    rng = np.random.default_rng(seed)
    n_seg = max(3, int(np.ceil(duration / spacing - 1e-9)))
    knots = np.round(np.arange(n_seg + 1) * spacing * US).astype(np.int64)
    lo = np.asarray(center, dtype=float) - size / 2
    control = lo + rng.random((n_seg + 1, 3)) * size
    return Spline3D(knots, control)


# ---------------------------------------------------------------------------
# cameras


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> RigidExtrinsics:
    """World-to-camera pose for a camera at ``position`` looking at ``target``."""
    position = np.asarray(position, dtype=float)
    z = np.asarray(target, dtype=float) - position
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    r = np.stack([x, y, z])
    return RigidExtrinsics(r, -r @ position)


def place_cameras(view_angle: float, baseline: float, center=(0.0, 0.0, 0.0)) -> tuple[RigidExtrinsics, RigidExtrinsics]:
    """Two horizontal cameras ``baseline`` apart whose optical axes meet at ``center`` at ``view_angle``."""
    if not 0 < view_angle < 180:
        raise ConfigError(f"view_angle must be in (0, 180), got {view_angle}")
    half = np.radians(view_angle) / 2.0
    dist = baseline / (2.0 * np.sin(half))
    c = np.asarray(center, dtype=float)
    poses = []
    for az in (-np.pi / 2 - half, -np.pi / 2 + half):
        pos = c + dist * np.array([np.cos(az), np.sin(az), 0.0])
        poses.append(look_at(pos, c))
    return poses[0], poses[1]


def relative_pose(pose1: RigidExtrinsics, pose2: RigidExtrinsics) -> RigidExtrinsics:
    """Camera-2-from-camera-1 transform given two world-to-camera poses."""
    r = pose2.rotation @ pose1.rotation.T
    return RigidExtrinsics(r, pose2.translation - r @ pose1.translation)


def project(camera: CameraModel, pose: RigidExtrinsics, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Undistorted pixel projection and depth of world points."""
    xc = np.asarray(points, dtype=float) @ pose.rotation.T + pose.translation
    z = xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack([camera.fx * xc[:, 0] / z + camera.cx, camera.fy * xc[:, 1] / z + camera.cy], axis=1)
    return uv, z


# ---------------------------------------------------------------------------
# rendering


@dataclass(frozen=True, eq=False)
class RenderResult:
    stream: EventStream
    tick_t: np.ndarray  # tick midpoints, us (simulation clock)
    centers: np.ndarray  # undistorted projected object center per tick
    visible: np.ndarray
    is_motion: np.ndarray  # per event of `stream`


def render_events(
    spline: Spline3D, camera: CameraModel, pose: RigidExtrinsics, cfg: ScenarioConfig, rng: np.random.Generator
) -> RenderResult:
    """Object events at ``cfg.tick_rate`` plus uniform background noise (simulation clock)."""
    tick = US // cfg.tick_rate
    dur = cfg.duration_us
    starts = np.arange(0, dur, tick, dtype=np.int64)
    mids = starts + tick / 2.0
    pos = spline.evaluate(mids)
    centers, depth = project(camera, pose, pos)
    front = depth > 0
    visible = front & camera.in_bounds(camera.distort_pixels(np.where(front[:, None], centers, 0.0)))
    if not visible.any():
        raise VisibilityError("object never visible in the camera")
    if visible.mean() < 0.5:
        warnings.warn(f"object visible in only {100 * visible.mean():.0f}% of the ticks", RuntimeWarning)

    step = np.diff(centers, axis=0, prepend=centers[:1])
    step[0] = centers[1] - centers[0] if len(centers) > 1 else 0.0
    disp = np.linalg.norm(step, axis=1)
    lam = np.where(front, cfg.event_rate_gain * disp, 0.0)
    counts = rng.poisson(lam)
    idx = np.repeat(np.arange(len(starts)), counts)
    if cfg.centroid_jitter is None:
        sigma = 0.5 * camera.fx * cfg.object_radius / depth[idx]
    else:
        sigma = np.full(len(idx), float(cfg.centroid_jitter))
    offs = rng.standard_normal((len(idx), 2)) * sigma[:, None]
    pts = centers[idx] + offs
    lead = np.sum(offs * step[idx], axis=1) >= 0
    px = np.rint(camera.distort_pixels(pts))
    t_ev = starts[idx] + rng.integers(0, tick, size=len(idx))
    inside = camera.in_bounds(px) & np.all(np.isfinite(px), axis=1)
    # rounding to the last row/column index keeps in_bounds consistent with integer pixels
    px = px[inside].astype(np.int64)
    motion = EventStream(t_ev[inside], px[:, 0], px[:, 1], np.where(lead[inside], 1, -1), camera)

    n_noise = rng.poisson(cfg.noise_rate * camera.width * camera.height * cfg.duration)
    noise = EventStream(
        rng.integers(0, dur, size=n_noise),
        rng.integers(0, camera.width, size=n_noise),
        rng.integers(0, camera.height, size=n_noise),
        rng.choice(np.array([-1, 1]), size=n_noise),
        camera,
    )
    order_src = np.r_[np.ones(len(motion), bool), np.zeros(n_noise, bool)]
    t_all = np.r_[motion.t, noise.t]
    order = np.argsort(t_all, kind="stable")
    stream = merge_sorted([motion, noise])
    return RenderResult(stream, mids, centers, visible, order_src[order])


# ---------------------------------------------------------------------------
# scenario


@dataclass(frozen=True, eq=False)
class GroundTruth:
    injected_offset: int
    extrinsics: RigidExtrinsics  # camera 2 from camera 1, metric
    pose1: RigidExtrinsics
    pose2: RigidExtrinsics
    spline: Spline3D
    camera1: CameraModel
    camera2: CameraModel
    center: tuple = (0.0, 0.0, 0.0)
    workspace_size: tuple = (4.0, 4.0, 2.0)
    duration: float = 10.0

    @property
    def workspace_diagonal(self) -> float:
        return float(np.linalg.norm(self.workspace_size))

    def points3d(self, t_sim_us) -> np.ndarray:
        return self.spline.evaluate(t_sim_us)

    def projected_centers(self, cam: int, t_cam_us) -> tuple[np.ndarray, np.ndarray]:
        """Undistorted true centers at camera-clock times; camera 2 runs ``injected_offset`` ahead."""
        t = np.asarray(t_cam_us, dtype=float)
        if cam == 2:
            t = t - self.injected_offset
        camera, pose = (self.camera1, self.pose1) if cam == 1 else (self.camera2, self.pose2)
        return project(camera, pose, self.points3d(t))

    def to_dict(self) -> dict:
        return {
            "offset_us": int(self.injected_offset),
            "R": self.extrinsics.rotation.tolist(),
            "t": self.extrinsics.translation.tolist(),
            "camera1": self.camera1.to_dict(),
            "camera2": self.camera2.to_dict(),
            "pose1": self.pose1.to_dict(),
            "pose2": self.pose2.to_dict(),
            "spline": self.spline.to_dict(),
            "workspace": {"center": list(self.center), "size": list(self.workspace_size)},
            "duration_s": self.duration,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        try:
            return cls(
                injected_offset=int(d["offset_us"]),
                extrinsics=RigidExtrinsics.from_dict(d),
                pose1=RigidExtrinsics.from_dict(d["pose1"]),
                pose2=RigidExtrinsics.from_dict(d["pose2"]),
                spline=Spline3D.from_dict(d["spline"]),
                camera1=CameraModel.from_dict(d["camera1"]),
                camera2=CameraModel.from_dict(d["camera2"]),
                center=tuple(d["workspace"]["center"]),
                workspace_size=tuple(d["workspace"]["size"]),
                duration=float(d.get("duration_s", 10.0)),
            )
        except KeyError as exc:
            raise ConfigError(f"ground truth missing key {exc}") from exc

    @classmethod
    def load(cls, path) -> "GroundTruth":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class Scenario:
    stream1: EventStream
    stream2: EventStream
    truth: GroundTruth
    render1: RenderResult
    render2: RenderResult
    config: ScenarioConfig
    files: dict


def build_truth(cfg: ScenarioConfig) -> GroundTruth:
    center = (0.0, 0.0, 0.0)
    spline = generate_spline([cfg.seed, 0], cfg.duration, center, cfg.workspace_size, cfg.knot_spacing)
    pose1, pose2 = place_cameras(cfg.view_angle, cfg.effective_baseline, center)
    return GroundTruth(
        injected_offset=int(cfg.injected_offset),
        extrinsics=relative_pose(pose1, pose2),
        pose1=pose1,
        pose2=pose2,
        spline=spline,
        camera1=cfg.camera,
        camera2=cfg.camera,
        center=center,
        workspace_size=cfg.workspace_size,
        duration=cfg.duration,
    )


def check_truth(truth: GroundTruth, t_sim_us: np.ndarray, tol: float = 1e-9) -> float:
    """Max |p2^T F p1| over times where the object is in front of both cameras."""
    f = compose_fundamental(truth.camera1, truth.camera2, truth.extrinsics)
    p1, z1 = truth.projected_centers(1, t_sim_us)
    p2, z2 = truth.projected_centers(2, np.asarray(t_sim_us) + truth.injected_offset)
    ok = (z1 > 0) & (z2 > 0)
    res = np.abs(np.sum(homogeneous(p2[ok]) * (homogeneous(p1[ok]) @ f.T), axis=1))
    worst = float(res.max()) if len(res) else 0.0
    if worst > tol:
        raise GeometryError(f"ground-truth projections violate the epipolar constraint ({worst:.3g})")
    return worst


def make_scenario(cfg: ScenarioConfig, out_dir=None) -> Scenario:
    """Render both cameras, inject the offset into camera 2 and optionally write the scenario files."""
    truth = build_truth(cfg)
    r1 = render_events(truth.spline, truth.camera1, truth.pose1, cfg, np.random.default_rng([cfg.seed, 1]))
    r2 = render_events(truth.spline, truth.camera2, truth.pose2, cfg, np.random.default_rng([cfg.seed, 2]))
    check_truth(truth, r1.tick_t)
    s2 = apply_offset(r2.stream, cfg.injected_offset)
    files = {}
    if out_dir is not None:
        files = write_scenario(out_dir, cfg, truth, r1.stream, s2)
    return Scenario(r1.stream, s2, truth, r1, r2, cfg, files)


def write_scenario(out_dir, cfg: ScenarioConfig, truth: GroundTruth, s1: EventStream, s2: EventStream) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "events1": "events1.csv",
        "events2": "events2.csv",
        "camera1": "camera1.json",
        "camera2": "camera2.json",
        "ground_truth": "ground_truth.json",
    }
    save_events(s1, out / files["events1"])
    save_events(s2, out / files["events2"])
    truth.camera1.save(out / files["camera1"])
    truth.camera2.save(out / files["camera2"])
    (out / files["ground_truth"]).write_text(json.dumps(truth.to_dict(), indent=2) + "\n")
    manifest = {"files": files, "seed": cfg.seed, "config": cfg.to_dict()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    files["manifest"] = "manifest.json"
    return files


def exact_trajectory(
    truth: GroundTruth,
    cam: int,
    cfg: ScenarioConfig,
    window: float = DEFAULT_WINDOW,
    phase: float = 0.0,
    n_min: int = DEFAULT_N_MIN,
    border_margin: float = DEFAULT_BORDER,
) -> Trajectory2D:
    """Noise-free centroid trajectory: true projected centers at window midpoints of the camera clock.

    ``n_events`` carries the expected object event count per window, so the
    validity rules match those of :func:`extract_centroids`.
    """
    start = (truth.injected_offset if cam == 2 else 0) + phase
    n_win = int((cfg.duration_us - phase) // window)
    t = start + (np.arange(n_win) + 0.5) * window
    t_sim_edges = start - (truth.injected_offset if cam == 2 else 0) + np.arange(n_win + 1) * window
    uv, z = truth.projected_centers(cam, t)
    edge_uv, _ = project(
        truth.camera1 if cam == 1 else truth.camera2,
        truth.pose1 if cam == 1 else truth.pose2,
        truth.points3d(np.clip(t_sim_edges, 0, cfg.duration_us)),
    )
    expected = cfg.event_rate_gain * np.linalg.norm(np.diff(edge_uv, axis=0), axis=1)
    camera = truth.camera1 if cam == 1 else truth.camera2
    n = np.floor(expected).astype(np.int64)
    u, v = uv[:, 0], uv[:, 1]
    inside = (
        (u >= border_margin)
        & (u <= camera.width - 1 - border_margin)
        & (v >= border_margin)
        & (v <= camera.height - 1 - border_margin)
    )
    valid = (z > 0) & (n >= n_min) & inside
    return Trajectory2D(t, uv, n, valid, window, camera)


def noise_free(cfg: ScenarioConfig) -> ScenarioConfig:
    return replace(cfg, noise_rate=0.0)
