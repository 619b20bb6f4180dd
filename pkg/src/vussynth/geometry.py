"""Pinhole camera and rigid / hinge motion math.

Conventions used throughout the package:

* camera-space point = ``R_g @ P_model + t_g``
* right-handed frames, camera looks along +z, image u to the right,
  v downward, origin at the top-left corner of the image
* pixel index ``(i, j)`` covers the continuous square ``[i, i+1) x [j, j+1)``
  so its center sits at ``(i + 0.5, j + 0.5)``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# absorbs round-trip float error before flooring to an integer pixel
_FLOOR_EPS = 1e-7


class GeometryError(ValueError):
    pass


class InvalidAxisError(GeometryError):
    pass


class BehindCameraError(GeometryError):
    pass


class InvalidDepthError(GeometryError):
    pass


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(a)):
        raise GeometryError(f"non-finite vector {a!r}")
    return a


def check_rotation(r, tol: float = 1e-9) -> np.ndarray:
    """Return `r` as a float64 3x3 array, raising if it is not a proper rotation."""
    m = np.asarray(r, dtype=np.float64)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        raise GeometryError("rotation must be a finite 3x3 matrix")
    if np.abs(m.T @ m - np.eye(3)).max() > tol:
        raise GeometryError("rotation is not orthonormal")
    if abs(np.linalg.det(m) - 1.0) > tol:
        raise GeometryError("rotation determinant is not +1")
    return m


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(vals)):
            raise GeometryError("intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class RigidPose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", check_rotation(self.rotation))
        object.__setattr__(self, "translation", _as_vec3(self.translation))

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        """Model space -> camera space for points of shape (..., 3)."""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def inverse_apply(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation


@dataclass(frozen=True, eq=False)
class PartMotion:
    """Hinge motion: rotation by `angle` about the line through `axis_point` along `axis_dir`."""

    axis_point: np.ndarray
    axis_dir: np.ndarray
    angle: float

    def __post_init__(self):
        object.__setattr__(self, "axis_point", _as_vec3(self.axis_point))
        d = _as_vec3(self.axis_dir)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise InvalidAxisError(f"axis direction {d!r} is not unit length")
        object.__setattr__(self, "axis_dir", d)
        object.__setattr__(self, "angle", float(self.angle))

    def rotation(self) -> np.ndarray:
        return axis_angle_rotation(self.axis_dir, self.angle)


def axis_angle_rotation(axis_dir, angle: float) -> np.ndarray:
    """Right-handed rotation matrix about a unit axis (Rodrigues' formula)."""
    a = _as_vec3(axis_dir)
    if abs(np.linalg.norm(a) - 1.0) > 1e-6:
        raise InvalidAxisError(f"axis direction {a!r} is not unit length")
    a = a / np.linalg.norm(a)
    kx = np.array([[0.0, -a[2], a[1]],
                   [a[2], 0.0, -a[0]],
                   [-a[1], a[0], 0.0]])
    s, c = np.sin(angle), np.cos(angle)
    return np.eye(3) + s * kx + (1.0 - c) * (kx @ kx)


def project_points(p_cam, k: CameraIntrinsics) -> np.ndarray:
    """Vectorized pinhole projection of (..., 3) camera points; no z check."""
    p = np.asarray(p_cam, dtype=np.float64)
    z = p[..., 2]
    return np.stack([k.fx * p[..., 0] / z + k.cx, k.fy * p[..., 1] / z + k.cy], axis=-1)


def project(p_cam, k: CameraIntrinsics) -> np.ndarray:
    p = _as_vec3(p_cam)
    if p[2] <= 0:
        raise BehindCameraError(f"point {p!r} is not in front of the camera")
    return project_points(p, k)


def back_project_pixels(uv, depth, k: CameraIntrinsics, pose: RigidPose) -> np.ndarray:
    """Vectorized model-space lift of continuous pixels (..., 2) with camera-space depth (...)."""
    uv = np.asarray(uv, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    cam = np.stack([d * (uv[..., 0] - k.cx) / k.fx,
                    d * (uv[..., 1] - k.cy) / k.fy,
                    d], axis=-1)
    return pose.inverse_apply(cam)


def back_project(u, depth: float, k: CameraIntrinsics, pose: RigidPose) -> np.ndarray:
    """Lift pixel `u` at camera-space `depth` into model space: R_g^-1 (d K^-1 [u;1] - t_g)."""
    if not depth > 0:
        raise InvalidDepthError(f"depth must be positive, got {depth!r}")
    return back_project_pixels(np.asarray(u, dtype=np.float64).reshape(2), depth, k, pose)


def articulate_points(p, motion: PartMotion) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    r = motion.rotation()
    return (p - motion.axis_point) @ r.T + motion.axis_point


def articulate_point(p, motion: PartMotion) -> np.ndarray:
    return articulate_points(_as_vec3(p), motion)


def to_pixel_index(uv, rounding: str = "floor") -> np.ndarray:
    uv = np.asarray(uv, dtype=np.float64)
    if rounding == "floor":
        return np.floor(uv + _FLOOR_EPS).astype(np.int64)
    if rounding == "nearest":
        return np.floor(uv + 0.5).astype(np.int64)
    raise ValueError(f"unknown rounding mode {rounding!r}")


def forward_map_pixels(uv, depth, k: CameraIntrinsics, pose: RigidPose, motion: PartMotion,
                       rounding: str = "floor"):
    """Map pixels through back-projection, hinge motion and re-projection.

    Returns ``(target, z, ok)``: integer target pixels (..., 2), the articulated
    camera-space depth, and a mask that is False where the articulated point
    falls behind the camera. Targets are meaningless where ``ok`` is False.
    """
    p_model = back_project_pixels(uv, depth, k, pose)
    cam = pose.apply(articulate_points(p_model, motion))
    z = cam[..., 2]
    ok = z > 0
    safe = np.where(ok[..., None], cam, np.array([0.0, 0.0, 1.0]))
    target = to_pixel_index(project_points(safe, k), rounding)
    return target, z, ok


def forward_map_pixel(u, depth: float, k: CameraIntrinsics, pose: RigidPose, motion: PartMotion,
                      rounding: str = "floor"):
    """Integer destination of pixel `u` after the part moves, or None if it lands behind the camera."""
    if not depth > 0:
        raise InvalidDepthError(f"depth must be positive, got {depth!r}")
    target, _, ok = forward_map_pixels(np.asarray(u, dtype=np.float64).reshape(2), depth,
                                       k, pose, motion, rounding)
    if not ok:
        return None
    return int(target[0]), int(target[1])
