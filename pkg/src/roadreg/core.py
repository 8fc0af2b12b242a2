"""Geometric domain types and SO(3)/SE(3) algebra.

Conventions: poses map world coordinates to camera coordinates
(X_cam = R @ X_world + t). The camera frame is the usual computer-vision
one: x right, y down, z forward. Twists are ordered (dtheta, dt).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, NearPiRotation

_ROT_TOL = 1e-9


def _as_vec3(x):
    v = np.asarray(x, dtype=float).reshape(3)
    return v


def skew(v):
    """3x3 skew-symmetric matrix such that skew(v) @ w == cross(v, w)."""
    v = _as_vec3(v)
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


@dataclass(frozen=True)
class PointCloud:
    """World-frame points with a per-point scalar or RGB appearance in [0,1]."""

    points: np.ndarray          # (N, 3) meters
    rgb: np.ndarray = None      # (N, 3) in [0,1], or None
    intensity: np.ndarray = None  # (N,) in [0,1], or None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError("points must be a non-empty (N,3) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        object.__setattr__(self, "points", pts)
        if self.rgb is not None:
            rgb = np.asarray(self.rgb, dtype=float)
            if rgb.shape != (pts.shape[0], 3):
                raise ValueError("rgb shape must be (N,3)")
            if rgb.min() < 0 or rgb.max() > 1:
                raise ValueError("rgb must be in [0,1]")
            object.__setattr__(self, "rgb", rgb)
        if self.intensity is not None:
            inten = np.asarray(self.intensity, dtype=float).reshape(-1)
            if inten.shape[0] != pts.shape[0]:
                raise ValueError("intensity length must equal N")
            if inten.min() < 0 or inten.max() > 1:
                raise ValueError("intensity must be in [0,1]")
            object.__setattr__(self, "intensity", inten)
        if self.rgb is None and self.intensity is None:
            raise ValueError("cloud needs rgb or intensity appearance")

    @property
    def count(self):
        return self.points.shape[0]

    def gray(self):
        """Scalar appearance per point: luma of rgb, or intensity as-is."""
        if self.rgb is not None:
            return self.rgb @ np.array([0.299, 0.587, 0.114])
        return self.intensity


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transform, world to camera: X_cam = R @ X_world + t."""

    R: np.ndarray  # (3,3)
    t: np.ndarray  # (3,)

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float).reshape(3, 3)
        t = _as_vec3(self.t)
        if np.linalg.norm(R.T @ R - np.eye(3)) > _ROT_TOL:
            raise ValueError("R is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > _ROT_TOL:
            raise ValueError("det(R) != 1")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity():
        return PoseSE3(np.eye(3), np.zeros(3))

    def transform(self, pts):
        """Apply to (3,) or (N,3) world points."""
        pts = np.asarray(pts, dtype=float)
        return pts @ self.R.T + self.t

    def inverse(self):
        return PoseSE3(self.R.T, -self.R.T @ self.t)

    def camera_center(self):
        """Camera position in world coordinates."""
        return -self.R.T @ self.t


@dataclass(frozen=True)
class Twist:
    dtheta: np.ndarray  # (3,) radians
    dt: np.ndarray      # (3,) meters

    def __post_init__(self):
        dtheta = _as_vec3(self.dtheta)
        dt = _as_vec3(self.dt)
        if not (np.all(np.isfinite(dtheta)) and np.all(np.isfinite(dt))):
            raise ValueError("twist components must be finite")
        object.__setattr__(self, "dtheta", dtheta)
        object.__setattr__(self, "dt", dt)

    @staticmethod
    def from_vector(v):
        v = np.asarray(v, dtype=float).reshape(6)
        return Twist(v[:3], v[3:])

    def vector(self):
        return np.concatenate([self.dtheta, self.dt])


@dataclass(frozen=True)
class Ray:
    """Viewing ray in the camera frame; origin is the camera center."""

    direction: np.ndarray  # (3,), unit norm, z > 0
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        d = _as_vec3(self.direction)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValueError("ray direction must be unit norm")
        if d[2] <= 0:
            raise ValueError("ray direction must have positive z")
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "origin", _as_vec3(self.origin))


@dataclass(frozen=True)
class Plane:
    """Plane a*x + b*y + c*z + d = 0 in the camera frame, |(a,b,c)| = 1."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        n = np.array([self.a, self.b, self.c], dtype=float)
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise ValueError("plane normal must be unit norm")

    @property
    def normal(self):
        return np.array([self.a, self.b, self.c])


def exp_so3(theta):
    """Rodrigues formula; maps a rotation vector to a rotation matrix."""
    theta = _as_vec3(theta)
    angle = np.linalg.norm(theta)
    if angle < 1e-12:
        # first-order Taylor is exact to machine precision here
        return np.eye(3) + skew(theta)
    axis = theta / angle
    K = skew(axis)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def log_so3(R):
    """Inverse of exp_so3. Raises NearPiRotation for angles >= pi - eps."""
    R = np.asarray(R, dtype=float).reshape(3, 3)
    tr = np.trace(R)
    if tr <= -1.0 + 1e-9:
        raise NearPiRotation("rotation angle too close to pi; log is not unique")
    cos_angle = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos_angle)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-7:
        # sin(angle)/angle ~ 1 - angle^2/6
        return 0.5 * w * (1.0 + angle * angle / 6.0)
    return w * (angle / (2.0 * np.sin(angle)))


def so3_left_jacobian(theta):
    """Left Jacobian of SO(3), coupling translation in the SE(3) exponential."""
    theta = _as_vec3(theta)
    angle = np.linalg.norm(theta)
    K = skew(theta)
    if angle < 1e-7:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    a2 = angle * angle
    return (np.eye(3)
            + (1.0 - np.cos(angle)) / a2 * K
            + (angle - np.sin(angle)) / (a2 * angle) * (K @ K))


def boxplus(Tbar, delta):
    """Left manifold update: exp(delta) composed on the left of Tbar."""
    dR = exp_so3(delta.dtheta)
    J = so3_left_jacobian(delta.dtheta)
    R = dR @ Tbar.R
    t = dR @ Tbar.t + J @ delta.dt
    return PoseSE3(R, t)


def pixel_ray(K, pixel):
    """Unit viewing ray through a pixel, in the camera frame."""
    u, v = float(pixel[0]), float(pixel[1])
    if not (0 <= u < K.width and 0 <= v < K.height):
        raise ValueError("pixel out of bounds")
    d = np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])
    return Ray(d / np.linalg.norm(d))


def project_point(K, T, P_world):
    """Pinhole projection of a world point; returns ((u, v), depth)."""
    X = T.transform(_as_vec3(P_world))
    if X[2] <= 0:
        raise BehindCamera(f"point has non-positive depth {X[2]:.3g}")
    u = K.fx * X[0] / X[2] + K.cx
    v = K.fy * X[1] / X[2] + K.cy
    return (u, v), X[2]


def project_points(K, T, P_world):
    """Vectorized projection of (N,3) world points.

    Returns (uv (N,2), depth (N,), in_front (N,) bool). Points behind the
    camera get uv = nan rather than raising.
    """
    P = np.asarray(P_world, dtype=float).reshape(-1, 3)
    X = P @ T.R.T + T.t
    z = X[:, 2]
    in_front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * X[:, 0] / z + K.cx
        v = K.fy * X[:, 1] / z + K.cy
    uv = np.stack([u, v], axis=1)
    uv[~in_front] = np.nan
    return uv, z, in_front


def projection_jacobian(K, X_cam):
    """d(u,v)/dX_cam of the pinhole projection, at a camera-frame point."""
    x, y, z = X_cam
    return np.array([[K.fx / z, 0.0, -K.fx * x / (z * z)],
                     [0.0, K.fy / z, -K.fy * y / (z * z)]])


def pose_point_jacobian(X_cam):
    """dX_cam/d(delta) of a left-perturbed pose at delta = 0; (3,6)."""
    return np.hstack([-skew(X_cam), np.eye(3)])
