"""Pinhole projection and SE(3) pose algebra.

Image convention: u grows rightward, v downward, pixel (col, row) has its
center at integer coordinates (col, row).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("raster dimensions must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside raster")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def in_raster(self, u, v):
        """True where continuous coordinates fall on a pixel of the raster."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return (u >= -0.5) & (u < self.width - 0.5) & (v >= -0.5) & (v < self.height - 0.5)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transform ``x -> rotation @ x + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("pose contains non-finite values")
        if np.max(np.abs(R.T @ R - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> "PoseSE3":
        return cls(np.eye(3), t)

    @classmethod
    def from_yaw(cls, yaw: float, t=(0.0, 0.0, 0.0)) -> "PoseSE3":
        """Rotation about +z by ``yaw`` radians."""
        c, s = np.cos(yaw), np.sin(yaw)
        return cls(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), t)

    @classmethod
    def from_matrix(cls, m) -> "PoseSE3":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_row_major(cls, values) -> "PoseSE3":
        """Build from the 12 numbers of the top 3x4 block, row-major."""
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.size != 12:
            raise ValueError(f"expected 12 pose numbers, got {values.size}")
        return cls.from_matrix(values.reshape(3, 4))

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def to_row_major(self) -> list[float]:
        return [float(x) for x in self.as_matrix()[:3].reshape(-1)]

    def apply(self, points) -> np.ndarray:
        """Transform one point (3,) or a batch (N, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def __matmul__(self, other: "PoseSE3") -> "PoseSE3":
        return compose(self, other)


def transform(point, pose: PoseSE3) -> np.ndarray:
    return pose.apply(point)


def compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    R = a.rotation @ b.rotation
    # re-orthonormalize to keep long chains inside the validation tolerance
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    return PoseSE3(R, a.rotation @ b.translation + a.translation)


def invert(a: PoseSE3) -> PoseSE3:
    Rt = a.rotation.T
    return PoseSE3(Rt, -Rt @ a.translation)


def project(point, cam: CameraModel):
    """Project a 3D camera-frame point.

    Returns ``(u, v, depth)`` or ``None`` when the point is behind the
    camera or lands outside the raster.
    """
    x, y, z = (float(c) for c in point)
    if z <= 0:
        return None
    u = cam.fx * x / z + cam.cx
    v = cam.fy * y / z + cam.cy
    if not cam.in_raster(u, v):
        return None
    return u, v, z


def project_points(points, cam: CameraModel):
    """Vectorized :func:`project`: returns ``u, v, depth, in_view``."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    z = p[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * p[:, 0] / z + cam.cx
        v = cam.fy * p[:, 1] / z + cam.cy
    ok = (z > 0) & np.isfinite(u) & np.isfinite(v)
    ok &= cam.in_raster(np.where(ok, u, -1.0), np.where(ok, v, -1.0))
    return u, v, z, ok


def backproject(u, v, depth, cam: CameraModel) -> np.ndarray:
    """Inverse of :func:`project` for a pixel and a positive depth."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    d = np.asarray(depth, dtype=float)
    x = (u - cam.cx) / cam.fx * d
    y = (v - cam.cy) / cam.fy * d
    return np.stack([x, y, d * np.ones_like(x)], axis=-1)


def pixel_index(coord):
    """Nearest pixel index of a continuous coordinate (pixel centers at integers)."""
    return np.floor(np.asarray(coord, dtype=float) + 0.5).astype(np.int64)
