"""Rigid transforms, pinhole projection, and the cuboid keypoint model.

Conventions used throughout the package:

  world frame   x/y lateral, z up; units are meters.
  camera frame  x right, y down, z forward along the optical axis.
  pixels        (u, v) measured right/down from the top-left image corner.
  quaternions   scalar-first (w, x, y, z), unit norm.

A ``Pose`` maps points from its own (body) frame into the parent frame:
``p_parent = R(q) @ p_body + t``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

QUAT_NORM_TOL = 1e-9


class PointBehindCamera(ValueError):
    """Raised when a point lands on or behind the camera plane (z <= 1e-6)."""

    def __init__(self, msg, index=None):
        super().__init__(msg)
        self.index = index


def quat_multiply(a, b):
    """Hamilton product of two (w, x, y, z) quaternions."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_rotvec(rv):
    """Exponential map: rotation vector (axis * angle) to unit quaternion."""
    rv = np.asarray(rv, dtype=float)
    angle = float(np.linalg.norm(rv))
    if angle < 1e-12:
        # first-order expansion keeps the map smooth through zero
        q = np.array([1.0, 0.5 * rv[0], 0.5 * rv[1], 0.5 * rv[2]])
        return q / np.linalg.norm(q)
    axis = rv / angle
    half = 0.5 * angle
    q = np.empty(4)
    q[0] = np.cos(half)
    q[1:] = np.sin(half) * axis
    return q


def quat_from_matrix(m):
    """Rotation matrix to unit quaternion (scalar-first), Shepperd's method."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([(m[2, 1] - m[1, 2]) / s,
                      0.25 * s,
                      (m[0, 1] + m[1, 0]) / s,
                      (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([(m[0, 2] - m[2, 0]) / s,
                      (m[0, 1] + m[1, 0]) / s,
                      0.25 * s,
                      (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([(m[1, 0] - m[0, 1]) / s,
                      (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s,
                      0.25 * s])
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def rotation_angle(q_a, q_b):
    """Angle in radians between two unit quaternions (sign-insensitive)."""
    d = abs(float(np.dot(q_a, q_b)))
    return 2.0 * np.arccos(min(1.0, d))


@dataclass
class Pose:
    """Rigid transform: quaternion (w, x, y, z) plus translation, meters."""

    quaternion: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.quaternion = np.asarray(self.quaternion, dtype=float).reshape(4)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        norm = float(np.linalg.norm(self.quaternion))
        if abs(norm - 1.0) > QUAT_NORM_TOL:
            raise ValueError(f"quaternion norm {norm} outside 1 +/- {QUAT_NORM_TOL}")

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_parts(cls, quaternion, translation):
        """Build a Pose, renormalizing the quaternion first."""
        q = np.asarray(quaternion, dtype=float).reshape(4)
        q = q / np.linalg.norm(q)
        return cls(q, np.asarray(translation, dtype=float).reshape(3))

    @classmethod
    def from_rotvec(cls, rotvec, translation):
        return cls(quat_from_rotvec(rotvec), np.asarray(translation, dtype=float))

    @classmethod
    def from_matrix(cls, mat):
        mat = np.asarray(mat, dtype=float)
        if mat.shape != (4, 4):
            raise ValueError(f"expected 4x4 matrix, got {mat.shape}")
        return cls(quat_from_matrix(mat[:3, :3]), mat[:3, 3].copy())

    @classmethod
    def random(cls, rng, translation_scale=1.0):
        """Uniform random rotation (Gaussian quaternion trick) with Gaussian translation."""
        q = rng.standard_normal(4)
        q = q / np.linalg.norm(q)
        t = rng.standard_normal(3) * translation_scale
        return cls(q, t)

    def rotation_matrix(self):
        return quat_to_matrix(self.quaternion)

    def to_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        """self then applied after other: (self o other)(p) = self(other(p))."""
        q = quat_multiply(self.quaternion, other.quaternion)
        q = q / np.linalg.norm(q)
        t = self.rotation_matrix() @ other.translation + self.translation
        return Pose(q, t)

    def inverse(self) -> "Pose":
        q_inv = quat_conjugate(self.quaternion)
        t_inv = -(quat_to_matrix(q_inv) @ self.translation)
        return Pose(q_inv, t_inv)

    def transform(self, points):
        """Map one point (3,) or a stack (N, 3) from body to parent frame."""
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        out = pts @ self.rotation_matrix().T + self.translation
        return out[0] if single else out


@dataclass
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


def project_point(pose: Pose, cam: CameraIntrinsics, point) -> np.ndarray:
    """Project one body-frame point through pose into pixel coordinates."""
    p = pose.transform(point)
    if p[2] <= 1e-6:
        raise PointBehindCamera(f"point at camera z {p[2]:.3e}")
    return np.array([cam.fx * p[0] / p[2] + cam.cx,
                     cam.fy * p[1] / p[2] + cam.cy])


def project_points(pose: Pose, cam: CameraIntrinsics, points) -> np.ndarray:
    """Vectorized projection of (N, 3) body points; raises with the offending index."""
    p = pose.transform(np.asarray(points, dtype=float))
    bad = np.nonzero(p[:, 2] <= 1e-6)[0]
    if bad.size:
        raise PointBehindCamera(f"point {bad[0]} at camera z {p[bad[0], 2]:.3e}",
                                index=int(bad[0]))
    uv = np.empty((p.shape[0], 2))
    uv[:, 0] = cam.fx * p[:, 0] / p[:, 2] + cam.cx
    uv[:, 1] = cam.fy * p[:, 1] / p[:, 2] + cam.cy
    return uv


def unproject_pixel(cam: CameraIntrinsics, uv, depth: float) -> np.ndarray:
    """Pixel plus known camera-frame depth back to a camera-frame point."""
    if depth <= 0:
        raise ValueError("depth must be positive")
    u, v = uv
    return np.array([(u - cam.cx) / cam.fx * depth,
                     (v - cam.cy) / cam.fy * depth,
                     depth])


# corner sign pattern, fixed enumeration order: (-,-,-) (-,-,+) (-,+,-) (-,+,+)
# (+,-,-) (+,-,+) (+,+,-) (+,+,+), then the centroid as keypoint 8
_CORNER_SIGNS = np.array([
    [-1, -1, -1],
    [-1, -1, +1],
    [-1, +1, -1],
    [-1, +1, +1],
    [+1, -1, -1],
    [+1, -1, +1],
    [+1, +1, -1],
    [+1, +1, +1],
], dtype=float)


@dataclass
class Cuboid:
    """Axis-aligned box in its own body frame, centered at the origin."""

    half_extents: np.ndarray

    def __post_init__(self):
        self.half_extents = np.asarray(self.half_extents, dtype=float).reshape(3)
        if np.any(self.half_extents <= 0):
            raise ValueError("half extents must be positive")

    def keypoints(self) -> np.ndarray:
        """8 corners in the fixed sign order plus the centroid: (9, 3)."""
        pts = np.empty((9, 3))
        pts[:8] = _CORNER_SIGNS * self.half_extents
        pts[8] = 0.0
        return pts


def cuboid_keypoints(cuboid: Cuboid, pose: Pose, cam: CameraIntrinsics) -> np.ndarray:
    """Project the 9 cuboid keypoints into the image: (9, 2) pixels."""
    return project_points(pose, cam, cuboid.keypoints())
