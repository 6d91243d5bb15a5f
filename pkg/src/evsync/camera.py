"""Pinhole camera with Brown-Conrady (radial-tangential) distortion."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, EventFileError

_FIELDS = ("fx", "fy", "cx", "cy", "k1", "k2", "p1", "p2", "k3", "width", "height")


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    k3: float = 0.0
    width: int = 346
    height: int = 260

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (self.width > 0 and self.height > 0):
            raise ConfigError(f"sensor size must be positive, got {self.width}x{self.height}")
        if not all(np.isfinite([self.cx, self.cy, self.k1, self.k2, self.p1, self.p2, self.k3])):
            raise ConfigError("principal point and distortion coefficients must be finite")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    @property
    def distortion(self) -> np.ndarray:
        return np.array([self.k1, self.k2, self.p1, self.p2, self.k3])

    @property
    def has_distortion(self) -> bool:
        return bool(np.any(self.distortion != 0.0))

    # -- pixel <-> normalized -------------------------------------------------
    def to_normalized(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return np.stack([(uv[..., 0] - self.cx) / self.fx, (uv[..., 1] - self.cy) / self.fy], axis=-1)

    def to_pixels(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return np.stack([xy[..., 0] * self.fx + self.cx, xy[..., 1] * self.fy + self.cy], axis=-1)

    # -- distortion ------------------------------------------------------------
    def distort_normalized(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        x, y = xy[..., 0], xy[..., 1]
        r2 = x * x + y * y
        radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3))
        xd = x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x)
        yd = y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y
        return np.stack([xd, yd], axis=-1)

    def undistort_normalized(
        self, xy_d: np.ndarray, max_iter: int = 10, tol: float = 1e-8
    ) -> tuple[np.ndarray, np.ndarray]:
        """Invert the distortion model with Newton iterations.

        A point converges once its Newton step falls below ``tol`` and the
        forward model reproduces the input within ``tol``. Points that do not
        converge within ``max_iter`` steps are flagged ``False``.
        """
        xy_d = np.asarray(xy_d, dtype=float).reshape(-1, 2)
        if not self.has_distortion:
            return xy_d.copy(), np.ones(len(xy_d), dtype=bool)
        k1, k2, k3, p1, p2 = self.k1, self.k2, self.k3, self.p1, self.p2
        xy = xy_d.copy()
        active = np.ones(len(xy), dtype=bool)
        with np.errstate(all="ignore"):
            for _ in range(max_iter):
                if not active.any():
                    break
                x, y = xy[active, 0], xy[active, 1]
                res = xy_d[active] - self.distort_normalized(xy[active])
                r2 = x * x + y * y
                radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
                g = 2.0 * k1 + r2 * (4.0 * k2 + 6.0 * k3 * r2)
                j11 = radial + g * x * x + 2.0 * p1 * y + 6.0 * p2 * x
                j12 = g * x * y + 2.0 * p1 * x + 2.0 * p2 * y
                j22 = radial + g * y * y + 6.0 * p1 * y + 2.0 * p2 * x
                det = j11 * j22 - j12 * j12
                dx = (j22 * res[:, 0] - j12 * res[:, 1]) / det
                dy = (j11 * res[:, 1] - j12 * res[:, 0]) / det
                idx = np.flatnonzero(active)
                xy[idx, 0] = x + dx
                xy[idx, 1] = y + dy
                small = np.abs(dx) < tol
                small &= np.abs(dy) < tol
                active[idx[small | ~np.isfinite(dx) | ~np.isfinite(dy)]] = False
            res = xy_d - self.distort_normalized(xy)
            converged = ~active & np.all(np.abs(res) < tol, axis=1) & np.all(np.isfinite(xy), axis=1)
        return xy, converged

    def distort_pixels(self, uv: np.ndarray) -> np.ndarray:
        return self.to_pixels(self.distort_normalized(self.to_normalized(uv)))

    def undistort_pixels(self, uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        xy, ok = self.undistort_normalized(self.to_normalized(np.asarray(uv, dtype=float).reshape(-1, 2)))
        return self.to_pixels(xy), ok

    def in_bounds(self, uv: np.ndarray, margin: float = 0.0) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        u, v = uv[..., 0], uv[..., 1]
        return (u >= margin) & (u < self.width - margin) & (v >= margin) & (v < self.height - margin)

    # -- serialization ---------------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        missing = [k for k in ("fx", "fy", "cx", "cy") if k not in d]
        if missing:
            raise ConfigError(f"camera model missing keys: {missing}")
        kwargs = {k: d[k] for k in _FIELDS if k in d}
        for k in ("width", "height"):
            if k in kwargs:
                kwargs[k] = int(kwargs[k])
        return cls(**kwargs)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "CameraModel":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise EventFileError(f"cannot read camera model {path}: {exc}") from exc
        return cls.from_dict(d)


def davis346(fx: float = 250.0, **distortion) -> CameraModel:
    """346x260 sensor with the principal point at the image center."""
    return CameraModel(fx=fx, fy=fx, cx=173.0, cy=130.0, width=346, height=260, **distortion)
