"""Frames, pinhole camera model and ray casting.

Conventions: camera frame is z forward, x right, y down. The field frame is
x/y horizontal and z up, with the arena center at the origin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


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
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, width: int, height: int) -> "CameraIntrinsics":
        """Rescale to another image size (pixel centers at integer coordinates)."""
        sx = width / self.width
        sy = height / self.height
        return CameraIntrinsics(
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=(self.cx + 0.5) * sx - 0.5,
            cy=(self.cy + 0.5) * sy - 0.5,
            width=width,
            height=height,
        )

    def contains(self, pixel) -> bool:
        u, v = pixel
        return -0.5 <= u < self.width - 0.5 and -0.5 <= v < self.height - 0.5


@dataclass(frozen=True)
class CameraPose:
    """Rigid camera-to-field transform."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3)
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", R)

    def inverse_apply(self, point_field) -> np.ndarray:
        return self.rotation.T @ (np.asarray(point_field, dtype=float) - self.translation)


@dataclass(frozen=True)
class FieldFrame:
    origin: tuple = (0.0, 0.0)
    heading: float = 0.0

    def __post_init__(self):
        if not (-math.pi < self.heading <= math.pi):
            raise ValueError("heading must lie in (-pi, pi]")


def wrap_angle(a: float) -> float:
    """Wrap into (-pi, pi]."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


def pixel_ray(intr: CameraIntrinsics, pixel) -> np.ndarray:
    """Back-project a pixel to the unit-depth point K^-1 (u, v, 1)."""
    u, v = pixel
    return np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])


def project_camera_point(intr: CameraIntrinsics, point_camera):
    """Project a camera-frame point; None when it is not in front of the camera."""
    x, y, z = point_camera
    if z <= 0.0:
        return None
    return np.array([intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy])


def project_point(intr: CameraIntrinsics, pose: CameraPose, point_field):
    """Project a field point into the image. Returns None for points behind the camera."""
    return project_camera_point(intr, pose.inverse_apply(point_field))


def to_field(pose: CameraPose, point_camera) -> np.ndarray:
    return pose.rotation @ np.asarray(point_camera, dtype=float) + pose.translation


def camera_rotation(yaw: float, pitch_down: float) -> np.ndarray:
    """Camera-to-field rotation for a forward camera on a level vehicle.

    ``yaw`` is the vehicle heading in the field frame (0 = +x, CCW positive),
    ``pitch_down`` tilts the optical axis below the horizon.
    """
    # camera axes expressed in a body frame (x fwd, y left, z up) at zero tilt
    fwd = np.array([math.cos(pitch_down), 0.0, -math.sin(pitch_down)])
    right = np.array([0.0, -1.0, 0.0])
    down = np.cross(fwd, right)
    body = np.column_stack([right, down, fwd])
    cy, sy = math.cos(yaw), math.sin(yaw)
    Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    return Rz @ body


def mount_pose(position, yaw: float, pitch_down: float) -> CameraPose:
    return CameraPose(np.asarray(position, dtype=float), camera_rotation(yaw, pitch_down))
