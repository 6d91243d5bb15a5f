"""Two-view geometry: fundamental matrices, robust estimation, pose recovery,
triangulation and similarity alignment.

Conventions: the epipolar constraint is ``p2^T F p1 = 0`` with points in
undistorted pixel coordinates, so the epipolar line of ``p2`` in image 1 is
``F^T p2`` and the line of ``p1`` in image 2 is ``F p1``. Extrinsics map
camera-1 coordinates into camera 2: ``X2 = R X1 + t``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .camera import CameraModel
from .errors import (
    CheiralityError,
    ConfigError,
    DegeneracyError,
    DegenerateGeometryError,
    EpipoleDegenerateError,
    IllConditionedError,
    InsufficientDataError,
)

ORTHO_TOL = 1e-9
SIGMA_FLOOR = 1e-6  # px; keeps the LMedS threshold meaningful on exact data
_DEGENERATE_RTOL = 1e-10
REFIT_ROUNDS = 10


@dataclass(frozen=True, eq=False)
class RigidExtrinsics:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=ORTHO_TOL) or abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise ConfigError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidExtrinsics":
        return cls(np.eye(3), np.zeros(3))

    def unit(self) -> "RigidExtrinsics":
        n = np.linalg.norm(self.translation)
        if n <= 1e-12:
            raise DegenerateGeometryError("cannot normalize a zero translation")
        return RigidExtrinsics(self.rotation, self.translation / n)

    @property
    def center(self) -> np.ndarray:
        """Camera-2 center expressed in camera-1 coordinates."""
        return -self.rotation.T @ self.translation

    def to_dict(self) -> dict:
        return {"R": self.rotation.tolist(), "t": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidExtrinsics":
        try:
            return cls(np.array(d["R"], dtype=float), np.array(d["t"], dtype=float))
        except KeyError as exc:
            raise ConfigError(f"extrinsics missing key {exc}") from exc


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    rmse: float = 0.0

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=float) @ self.rotation.T + self.translation


# ---------------------------------------------------------------------------
# small helpers


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def homogeneous(pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    return np.concatenate([pts, np.ones(pts.shape[:-1] + (1,))], axis=-1)


def rotation_about(axis, angle_deg: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    a = np.deg2rad(angle_deg)
    k = skew(axis)
    return np.eye(3) + np.sin(a) * k + (1.0 - np.cos(a)) * (k @ k)


def normalize_fundamental(f: np.ndarray) -> np.ndarray:
    """Unit Frobenius norm with the largest-magnitude entry made positive."""
    f = np.asarray(f, dtype=float)
    n = np.linalg.norm(f)
    if n == 0.0:
        raise DegenerateGeometryError("zero fundamental matrix")
    f = f / n
    if f.flat[np.argmax(np.abs(f))] < 0:
        f = -f
    return f


def enforce_rank2(f: np.ndarray) -> np.ndarray:
    u, s, vt = np.linalg.svd(f)
    s[2] = 0.0
    return (u * s) @ vt


# ---------------------------------------------------------------------------
# fundamental matrix composition and epipolar distances


def compose_fundamental(k1: CameraModel, k2: CameraModel, ext: RigidExtrinsics) -> np.ndarray:
    """F = K2^-T [t]x R K1^-1, unit Frobenius norm."""
    if np.linalg.norm(ext.translation) <= 1e-12:
        raise DegenerateGeometryError("zero baseline: fundamental matrix undefined")
    f = k2.K_inv.T @ skew(ext.translation) @ ext.rotation @ k1.K_inv
    return normalize_fundamental(f)


def epipolar_line_in_1(f: np.ndarray, p2) -> np.ndarray:
    h = homogeneous(np.asarray(p2, dtype=float))
    line = np.asarray(f, dtype=float).T @ h
    if np.hypot(line[0], line[1]) <= _line_floor(f, h):
        raise EpipoleDegenerateError("point is the epipole; its epipolar line is undefined")
    return line


def epipolar_line_in_2(f: np.ndarray, p1) -> np.ndarray:
    h = homogeneous(np.asarray(p1, dtype=float))
    line = np.asarray(f, dtype=float) @ h
    if np.hypot(line[0], line[1]) <= _line_floor(f, h):
        raise EpipoleDegenerateError("point is the epipole; its epipolar line is undefined")
    return line


def point_line_distance(p, line) -> float:
    a, b, c = np.asarray(line, dtype=float)
    norm = np.hypot(a, b)
    if not norm > 0.0:
        raise ConfigError("invalid line: a and b are both zero")
    u, v = np.asarray(p, dtype=float)
    return float(abs(a * u + b * v + c) / norm)


def epipolar_distances(f: np.ndarray, p1: np.ndarray, p2: np.ndarray, symmetric: bool = False) -> np.ndarray:
    """Distance of each p1 to its epipolar line F^T p2 (mean with the image-2 distance if symmetric).

    Epipole-degenerate pairs come back as NaN.
    """
    h1 = homogeneous(p1)
    h2 = homogeneous(p2)
    l1 = h2 @ f  # rows are (F^T p2)^T
    l2 = h1 @ f.T
    e = np.sum(h1 * l1, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        n1 = np.hypot(l1[:, 0], l1[:, 1])
        d1 = np.where(n1 > _line_floor(f, h2), np.abs(e) / n1, np.nan)
        if not symmetric:
            return d1
        n2 = np.hypot(l2[:, 0], l2[:, 1])
        d2 = np.where(n2 > _line_floor(f, h1), np.abs(e) / n2, np.nan)
    return 0.5 * (d1 + d2)


def _line_floor(f, h):
    # below this the line direction is rounding noise: the point is the epipole
    return 1e-12 * np.linalg.norm(f) * np.linalg.norm(h, axis=-1)


def symmetric_epipolar_sq(f: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """d(p1, F^T p2)^2 + d(p2, F p1)^2."""
    h1 = homogeneous(p1)
    h2 = homogeneous(p2)
    l1 = h2 @ f
    l2 = h1 @ f.T
    e2 = np.sum(h1 * l1, axis=1) ** 2
    n1 = l1[:, 0] ** 2 + l1[:, 1] ** 2
    n2 = l2[:, 0] ** 2 + l2[:, 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        r = e2 * (1.0 / n1 + 1.0 / n2)
    at_epipole = (np.sqrt(n1) <= _line_floor(f, h2)) | (np.sqrt(n2) <= _line_floor(f, h1))
    return np.where(np.isfinite(r) & ~at_epipole, r, np.inf)


# ---------------------------------------------------------------------------
# estimation


def hartley_normalize(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Translate to zero centroid and scale to mean distance sqrt(2)."""
    pts = np.asarray(pts, dtype=float)
    c = pts.mean(axis=0)
    d = np.mean(np.linalg.norm(pts - c, axis=1))
    if not d > 0:
        raise DegeneracyError("all points coincide")
    s = np.sqrt(2.0) / d
    t = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    return (pts - c) * s, t


def _design_matrix(n1: np.ndarray, n2: np.ndarray) -> np.ndarray:
    u1, v1 = n1[:, 0], n1[:, 1]
    u2, v2 = n2[:, 0], n2[:, 1]
    one = np.ones_like(u1)
    return np.stack([u2 * u1, u2 * v1, u2, v2 * u1, v2 * v1, v2, u1, v1, one], axis=1)


def eight_point(p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Normalized 8-point estimate, rank 2, unit norm."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    if len(p1) < 8:
        raise InsufficientDataError(f"need at least 8 correspondences, got {len(p1)}")
    n1, t1 = hartley_normalize(p1)
    n2, t2 = hartley_normalize(p2)
    a = _design_matrix(n1, n2)
    _, s, vt = np.linalg.svd(a, full_matrices=False)
    if s[7] <= _DEGENERATE_RTOL * s[0]:
        raise DegeneracyError("rank-deficient design matrix (degenerate point configuration)")
    f = enforce_rank2(vt[-1].reshape(3, 3))
    return normalize_fundamental(t2.T @ f @ t1)


def draw_samples(rng: np.random.Generator, n: int, iterations: int, size: int = 8) -> np.ndarray:
    """``iterations`` rows of ``size`` distinct indices in [0, n)."""
    samples = rng.integers(0, n, size=(iterations, size))
    while True:
        srt = np.sort(samples, axis=1)
        bad = np.any(srt[:, 1:] == srt[:, :-1], axis=1)
        if not bad.any():
            return samples
        samples[bad] = rng.integers(0, n, size=(int(bad.sum()), size))


def lmeds_threshold(median_residual: float, n: int) -> float:
    """Squared-residual inlier bound (2.5 sigma)^2 from the robust scale estimate."""
    sigma = 1.4826 * (1.0 + 5.0 / (n - 8)) * np.sqrt(median_residual) if n > 8 else np.sqrt(median_residual)
    sigma = max(sigma, SIGMA_FLOOR)
    return (2.5 * sigma) ** 2


def estimate_fundamental_lmeds(
    p1: np.ndarray,
    p2: np.ndarray,
    rng_seed=0,
    iterations: int = 500,
    samples: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Least-median-of-squares fundamental matrix.

    Each of ``iterations`` random 8-point samples yields a candidate scored by
    the median squared symmetric epipolar distance over all pairs. The winner
    defines the inlier bound; the returned F is the normalized 8-point refit on
    those inliers, repeated until the inlier set stops changing. ``samples``
    overrides the random draw (used to check relabeling invariance).
    """
    p1 = np.ascontiguousarray(p1, dtype=float)
    p2 = np.ascontiguousarray(p2, dtype=float)
    n = len(p1)
    if n < 8:
        raise InsufficientDataError(f"need at least 8 correspondences, got {n}")
    if len(p2) != n:
        raise ConfigError("point lists differ in length")
    n1, t1 = hartley_normalize(p1)
    n2, t2 = hartley_normalize(p2)
    if samples is None:
        samples = draw_samples(np.random.default_rng(rng_seed), n, iterations)
    samples = np.ascontiguousarray(samples, dtype=np.int64)
    best_k, best_med, best_f, _ = _kernels.lmeds_search(n1, n2, p1, p2, t1, t2, samples, _DEGENERATE_RTOL)
    if best_k < 0:
        raise DegeneracyError("every minimal sample produced a rank-deficient design matrix")
    thresh = lmeds_threshold(best_med, n)
    inliers = symmetric_epipolar_sq(best_f, p1, p2) <= thresh
    f = normalize_fundamental(best_f)
    # refit on the inliers; the refit's own inlier set may differ, so repeat until stable
    for _ in range(REFIT_ROUNDS):
        if inliers.sum() < 8:
            break
        try:
            f = eight_point(p1[inliers], p2[inliers])
        except DegeneracyError:
            break
        mask = symmetric_epipolar_sq(f, p1, p2) <= thresh
        if np.array_equal(mask, inliers):
            break
        inliers = mask
    mask = symmetric_epipolar_sq(f, p1, p2) <= thresh
    return f, mask


# ---------------------------------------------------------------------------
# pose recovery and triangulation

_W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def _triangulate_normalized(x1: np.ndarray, x2: np.ndarray, r: np.ndarray, t: np.ndarray) -> np.ndarray:
    """DLT with P1 = [I|0], P2 = [R|t] on normalized homogeneous rays; returns (n, 3)."""
    p1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    p2 = np.hstack([r, t.reshape(3, 1)])
    a = np.stack(
        [
            x1[:, 0:1] * p1[2] - p1[0],
            x1[:, 1:2] * p1[2] - p1[1],
            x2[:, 0:1] * p2[2] - p2[0],
            x2[:, 1:2] * p2[2] - p2[1],
        ],
        axis=1,
    )
    _, _, vt = np.linalg.svd(a)
    xh = vt[:, -1, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        return xh[:, :3] / xh[:, 3:4]


def decompose_essential(e: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    u, _, vt = np.linalg.svd(e)
    if np.linalg.det(u) < 0:
        u[:, 2] *= -1
    if np.linalg.det(vt) < 0:
        vt[2, :] *= -1
    r1 = u @ _W @ vt
    r2 = u @ _W.T @ vt
    t = u[:, 2]
    return [(r1, t), (r1, -t), (r2, t), (r2, -t)]


def decompose_to_extrinsics(
    f: np.ndarray, k1: CameraModel, k2: CameraModel, p1: np.ndarray, p2: np.ndarray
) -> RigidExtrinsics:
    """Relative pose (R, unit t) from F, disambiguated by cheirality."""
    p1 = np.asarray(p1, dtype=float).reshape(-1, 2)
    p2 = np.asarray(p2, dtype=float).reshape(-1, 2)
    if len(p1) < 1:
        raise InsufficientDataError("need at least one correspondence for cheirality")
    e = k2.K.T @ np.asarray(f, dtype=float) @ k1.K
    u, _, vt = np.linalg.svd(e)
    e = u @ np.diag([1.0, 1.0, 0.0]) @ vt
    x1 = homogeneous(p1) @ k1.K_inv.T
    x2 = homogeneous(p2) @ k2.K_inv.T
    best = None
    best_count = -1
    for r, t in decompose_essential(e):
        pts = _triangulate_normalized(x1, x2, r, t)
        z1 = pts[:, 2]
        z2 = (pts @ r.T + t)[:, 2]
        count = int(np.sum((z1 > 0) & (z2 > 0)))
        if count > best_count:
            best, best_count = (r, t), count
    if best_count * 2 <= len(p1):
        raise CheiralityError(
            f"no pose candidate puts a majority of points in front of both cameras "
            f"(best {best_count}/{len(p1)})"
        )
    r, t = best
    return RigidExtrinsics(r, t / np.linalg.norm(t))


def projection_matrix(k: CameraModel, ext: RigidExtrinsics) -> np.ndarray:
    return k.K @ np.hstack([ext.rotation, ext.translation.reshape(3, 1)])


MIN_TRIANGULATION_ANGLE = 0.1  # degrees


def triangulate_many(
    k1: CameraModel, ext1: RigidExtrinsics, k2: CameraModel, ext2: RigidExtrinsics, p1: np.ndarray, p2: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized linear triangulation.

    ``ext1``/``ext2`` map world coordinates into each camera. Returns the world
    points and a mask that is False where the rays meet below
    ``MIN_TRIANGULATION_ANGLE``.
    """
    p1 = np.asarray(p1, dtype=float).reshape(-1, 2)
    p2 = np.asarray(p2, dtype=float).reshape(-1, 2)
    P1 = projection_matrix(k1, ext1)
    P2 = projection_matrix(k2, ext2)
    a = np.stack(
        [
            p1[:, 0:1] * P1[2] - P1[0],
            p1[:, 1:2] * P1[2] - P1[1],
            p2[:, 0:1] * P2[2] - P2[0],
            p2[:, 1:2] * P2[2] - P2[1],
        ],
        axis=1,
    )
    # row scaling does not change the solution but helps conditioning
    a /= np.linalg.norm(a, axis=2, keepdims=True)
    _, _, vt = np.linalg.svd(a)
    xh = vt[:, -1, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        pts = xh[:, :3] / xh[:, 3:4]
    d1 = homogeneous(p1) @ k1.K_inv.T @ ext1.rotation
    d2 = homogeneous(p2) @ k2.K_inv.T @ ext2.rotation
    cosang = np.sum(d1 * d2, axis=1) / (np.linalg.norm(d1, axis=1) * np.linalg.norm(d2, axis=1))
    angle = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    c1 = -ext1.rotation.T @ ext1.translation
    c2 = -ext2.rotation.T @ ext2.translation
    ok = (angle >= MIN_TRIANGULATION_ANGLE) & np.all(np.isfinite(pts), axis=1)
    if np.linalg.norm(c1 - c2) <= 1e-12:
        ok[:] = False
    return pts, ok


def triangulate(
    k1: CameraModel, ext1: RigidExtrinsics, k2: CameraModel, ext2: RigidExtrinsics, p1, p2
) -> np.ndarray:
    pts, ok = triangulate_many(k1, ext1, k2, ext2, p1, p2)
    if not ok[0]:
        raise IllConditionedError(
            f"viewing rays nearly parallel (< {MIN_TRIANGULATION_ANGLE} deg) or coincident cameras"
        )
    return pts[0]


# ---------------------------------------------------------------------------
# alignment and error metrics


def umeyama_align(source, target) -> SimilarityTransform:
    """Closed-form similarity (s, R, t) minimizing sum ||s R x_i + t - y_i||^2."""
    x = np.asarray(source, dtype=float)
    y = np.asarray(target, dtype=float)
    if x.shape != y.shape:
        raise ConfigError(f"source and target differ in shape: {x.shape} vs {y.shape}")
    if x.ndim != 2 or x.shape[1] != 3 or len(x) < 3:
        raise InsufficientDataError("need at least 3 paired 3-D points")
    mx = x.mean(axis=0)
    my = y.mean(axis=0)
    xc = x - mx
    yc = y - my
    sx = np.linalg.svd(xc, compute_uv=False)
    if sx[1] <= 1e-10 * max(sx[0], 1e-300):
        raise DegeneracyError("source points are collinear or coincident")
    n = len(x)
    cov = yc.T @ xc / n
    u, d, vt = np.linalg.svd(cov)
    s_fix = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_fix[2, 2] = -1.0
    r = u @ s_fix @ vt
    var_x = np.sum(xc**2) / n
    scale = float(np.trace(np.diag(d) @ s_fix) / var_x)
    t = my - scale * r @ mx
    resid = scale * x @ r.T + t - y
    rmse = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
    return SimilarityTransform(scale, r, t, rmse)


def rotation_error_deg(r_est, r_true) -> float:
    """Angle of r_est^T r_true; atan2 form of arccos((tr - 1) / 2), accurate near zero."""
    rel = np.asarray(r_est, dtype=float).T @ np.asarray(r_true, dtype=float)
    c = (np.trace(rel) - 1.0) / 2.0
    w = 0.5 * np.array([rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0], rel[1, 0] - rel[0, 1]])
    return float(np.degrees(np.arctan2(np.linalg.norm(w), c)))


def direction_error_deg(t_est, t_true) -> float:
    """Sign-invariant angle between two directions."""
    a = np.asarray(t_est, dtype=float)
    b = np.asarray(t_true, dtype=float)
    if np.linalg.norm(a) == 0 or np.linalg.norm(b) == 0:
        raise ConfigError("direction error undefined for a zero vector")
    return float(np.degrees(np.arctan2(np.linalg.norm(np.cross(a, b)), abs(float(a @ b)))))
