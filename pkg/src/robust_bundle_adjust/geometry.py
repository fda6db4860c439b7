"""Calibrated pinhole camera: projection h(x_j, y_i) and its analytic Jacobians.

A camera pose is six numbers, an axis-angle rotation and a position. The
rotation maps world directions into the camera frame, so a world point X is
seen at ``p = R(r) (X - C)`` with the optical axis along +z. Intrinsics are
fixed constants and never refined.

The batch functions work on arrays with one row per observation and are what
the objective and solver use; ``project`` and ``jacobians`` are single-call
conveniences built on top of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from robust_bundle_adjust.errors import BehindCamera, ValidationError

POSE_DIM = 6
POINT_DIM = 3
PIXEL_DIM = 2

# Below this angle the left-Jacobian coefficients use their Taylor series.
_SMALL_ANGLE = 1e-4


def _frozen_vector(values, size: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if arr.shape != (size,):
        raise ValidationError(f"{name} must have {size} components, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Intrinsics:
    focal_length: float
    principal_point: tuple[float, float]
    image_size: tuple[float, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "focal_length", float(self.focal_length))
        object.__setattr__(self, "principal_point", tuple(float(v) for v in self.principal_point))
        object.__setattr__(self, "image_size", tuple(float(v) for v in self.image_size))
        if not self.focal_length > 0:
            raise ValidationError(f"focal_length must be > 0, got {self.focal_length}")
        if len(self.principal_point) != 2 or len(self.image_size) != 2:
            raise ValidationError("principal_point and image_size must have 2 components")
        if not all(v > 0 for v in self.image_size):
            raise ValidationError(f"image_size components must be > 0, got {self.image_size}")

    def to_dict(self) -> dict:
        return {
            "focal_length": self.focal_length,
            "principal_point": list(self.principal_point),
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Intrinsics":
        return cls(
            focal_length=data["focal_length"],
            principal_point=tuple(data["principal_point"]),
            image_size=tuple(data["image_size"]),
        )


def default_intrinsics(image_size: float = 1024.0, fov_degrees: float = 74.0) -> Intrinsics:
    """Square frame camera whose horizontal field of view is ``fov_degrees``."""
    half = 0.5 * float(image_size)
    focal = half / math.tan(math.radians(fov_degrees) / 2.0)
    return Intrinsics(focal_length=focal, principal_point=(half, half), image_size=(image_size, image_size))


@dataclass(frozen=True, eq=False)
class CameraPose:
    position: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", _frozen_vector(self.position, 3, "position"))
        object.__setattr__(self, "rotation", _frozen_vector(self.rotation, 3, "rotation"))

    def as_vector(self) -> np.ndarray:
        """Parameter block ``[rotation, position]``."""
        return np.concatenate([self.rotation, self.position])

    @classmethod
    def from_vector(cls, vector) -> "CameraPose":
        vector = np.asarray(vector, dtype=np.float64)
        return cls(position=vector[3:6], rotation=vector[0:3])

    def rotation_matrix(self) -> np.ndarray:
        return rotation_matrices(self.rotation)[0]

    def canonical(self) -> "CameraPose":
        return CameraPose(position=self.position, rotation=canonicalize_rotation(self.rotation))

    def to_dict(self) -> dict:
        return {"position": self.position.tolist(), "rotation": self.rotation.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "CameraPose":
        return cls(position=data["position"], rotation=data["rotation"])


@dataclass(frozen=True, eq=False)
class WorldPoint:
    coords: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "coords", _frozen_vector(self.coords, 3, "coords"))


def canonicalize_rotation(rotvec) -> np.ndarray:
    """Equivalent rotation vector with magnitude in [0, pi]."""
    return Rotation.from_rotvec(np.array(rotvec, dtype=np.float64)).as_rotvec()


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices for an (n, 3) array, shape (n, 3, 3)."""
    v = np.atleast_2d(v)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def rotation_matrices(rotvecs: np.ndarray) -> np.ndarray:
    # scipy rejects read-only buffers, and poses hold frozen arrays
    return Rotation.from_rotvec(np.array(np.atleast_2d(rotvecs), dtype=np.float64)).as_matrix()


def left_jacobian(rotvecs: np.ndarray) -> np.ndarray:
    """SO(3) left Jacobian: exp(r + d) ~ exp(J_l(r) d) exp(r)."""
    rotvecs = np.atleast_2d(rotvecs)
    theta = np.linalg.norm(rotvecs, axis=1)
    theta2 = theta * theta
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    b = np.where(small, 1.0 / 6.0 - theta2 / 120.0, (safe - np.sin(safe)) / (safe**3))
    K = skew(rotvecs)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + a[:, None, None] * K + b[:, None, None] * (K @ K)


def _camera_frame(rotvecs, positions, points):
    R = rotation_matrices(rotvecs)
    p = np.einsum("kij,kj->ki", R, np.atleast_2d(points) - np.atleast_2d(positions))
    depth = p[:, 2]
    bad = np.flatnonzero(~(depth > 0))
    if bad.size:
        k = int(bad[0])
        raise BehindCamera(depth[k], observation=k)
    return R, p


def project_batch(rotvecs, positions, focal, principal, points) -> np.ndarray:
    """Pixels of ``points`` seen by the matching cameras, shape (n, 2).

    Raises BehindCamera whose ``observation`` is the row index in the batch.
    """
    _, p = _camera_frame(rotvecs, positions, points)
    focal = np.broadcast_to(np.asarray(focal, dtype=np.float64), (p.shape[0],))
    return focal[:, None] * p[:, :2] / p[:, 2:3] + np.atleast_2d(principal)


def linearize_batch(rotvecs, positions, focal, principal, points):
    """Pixels plus Jacobians A = dh/d[rotation, position], B = dh/dpoint.

    Returns (pixels (n, 2), A (n, 2, 6), B (n, 2, 3)).
    """
    rotvecs = np.atleast_2d(rotvecs)
    R, p = _camera_frame(rotvecs, positions, points)
    n = p.shape[0]
    focal = np.broadcast_to(np.asarray(focal, dtype=np.float64), (n,))
    inv_z = 1.0 / p[:, 2]
    pixels = focal[:, None] * p[:, :2] / p[:, 2:3] + np.atleast_2d(principal)

    # d(pixel)/d(camera-frame point)
    dpi = np.zeros((n, 2, 3))
    fz = focal * inv_z
    dpi[:, 0, 0] = fz
    dpi[:, 1, 1] = fz
    dpi[:, 0, 2] = -fz * p[:, 0] * inv_z
    dpi[:, 1, 2] = -fz * p[:, 1] * inv_z

    dp_drot = -skew(p) @ left_jacobian(rotvecs)
    A = np.empty((n, 2, 6))
    A[:, :, 0:3] = dpi @ dp_drot
    A[:, :, 3:6] = -(dpi @ R)
    B = dpi @ R
    return pixels, A, B


def back_project_batch(rotvecs, positions, focal, principal, pixels):
    """Camera centres and unit world-frame ray directions through ``pixels``."""
    R = rotation_matrices(rotvecs)
    pixels = np.atleast_2d(pixels)
    focal = np.broadcast_to(np.asarray(focal, dtype=np.float64), pixels.shape[:1])
    d_cam = np.ones((pixels.shape[0], 3))
    d_cam[:, :2] = (pixels - np.atleast_2d(principal)) / focal[:, None]
    d_world = np.einsum("kji,kj->ki", R, d_cam)
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    return np.atleast_2d(positions).astype(np.float64), d_world


def project(pose: CameraPose, intrinsics: Intrinsics, point: WorldPoint) -> np.ndarray:
    try:
        pixels = project_batch(
            pose.rotation, pose.position, intrinsics.focal_length, intrinsics.principal_point, point.coords
        )
    except BehindCamera as exc:
        raise BehindCamera(exc.depth) from None
    return pixels[0]


def jacobians(pose: CameraPose, intrinsics: Intrinsics, point: WorldPoint) -> tuple[np.ndarray, np.ndarray]:
    try:
        _, A, B = linearize_batch(
            pose.rotation, pose.position, intrinsics.focal_length, intrinsics.principal_point, point.coords
        )
    except BehindCamera as exc:
        raise BehindCamera(exc.depth) from None
    return A[0], B[0]


def back_project(pose: CameraPose, intrinsics: Intrinsics, pixel) -> tuple[np.ndarray, np.ndarray]:
    centres, rays = back_project_batch(
        pose.rotation, pose.position, intrinsics.focal_length, intrinsics.principal_point, pixel
    )
    return centres[0], rays[0]
