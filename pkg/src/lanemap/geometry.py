"""Rigid-body transforms and their tangent-space coordinates.

Poses map body-frame coordinates to the world frame (p_w = R p_b + t).
The tangent convention is a rotation-first 6-vector [omega, v]: ``omega``
is an SO(3) rotation vector in radians and ``v`` a plain translation in
meters, composed through the group.  Residuals between two poses are
expressed as ``pose_log(T_ref^-1 * T)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UP = np.array([0.0, 0.0, 1.0])


class DegenerateRotationError(ValueError):
    """Rotation log requested too close to the angle-pi singularity."""


class DegenerateGeometryError(ValueError):
    """Input geometry does not determine the requested quantity."""


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_angle(delta_rotation: np.ndarray) -> float:
    """Angle of a rotation matrix, arccos((trace - 1) / 2), in [0, pi].

    The arccos argument is clamped to [-1, 1] to absorb round-off in the
    trace of nearly exact rotations.
    """
    tr = float(np.trace(delta_rotation))
    return float(np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0)))


def translation_norm(delta_translation: np.ndarray) -> float:
    """Euclidean norm of a translation difference, in meters."""
    return float(np.linalg.norm(delta_translation))


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rotation matrix of a rotation vector (Rodrigues)."""
    omega = np.asarray(omega, dtype=float)
    angle = float(np.linalg.norm(omega))
    K = skew(omega)
    if angle < 1e-10:
        # second-order series, exact enough below the threshold
        return np.eye(3) + K + 0.5 * (K @ K)
    K = K / angle
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def so3_log(rotation: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix; rejects angles within 1e-6 of pi."""
    angle = rotation_angle(rotation)
    if np.pi - angle < 1e-6:
        raise DegenerateRotationError(
            f"rotation angle {angle:.9f} too close to pi for a stable log"
        )
    axis_raw = np.array(
        [
            rotation[2, 1] - rotation[1, 2],
            rotation[0, 2] - rotation[2, 0],
            rotation[1, 0] - rotation[0, 1],
        ]
    )
    if angle < 1e-10:
        return 0.5 * axis_raw
    return (angle / (2.0 * np.sin(angle))) * axis_raw


def so3_right_jacobian_inverse(omega: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian of SO(3): d/d(delta) Log(Exp(omega) Exp(delta)) at 0."""
    angle = float(np.linalg.norm(omega))
    K = skew(omega)
    if angle < 1e-6:
        return np.eye(3) + 0.5 * K + (1.0 / 12.0) * (K @ K)
    coeff = 1.0 / angle**2 - (1.0 + np.cos(angle)) / (2.0 * angle * np.sin(angle))
    return np.eye(3) + 0.5 * K + coeff * (K @ K)


@dataclass
class Pose:
    """Rigid-body transform: orthonormal rotation (det +1) plus translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply the transform to one (3,) point or a stack (N, 3) of points."""
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            return self.rotation @ points + self.translation
        return points @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=float)
        return Pose(m[:3, :3], m[:3, 3])

    def copy(self) -> "Pose":
        return Pose(self.rotation.copy(), self.translation.copy())


def transform_point(pose: Pose, point: np.ndarray) -> np.ndarray:
    """World-frame image of a body-frame point, R p + t."""
    return pose.transform(point)


def pose_exp(delta: np.ndarray) -> Pose:
    """Pose for a tangent 6-vector [omega, v] (rotation-first)."""
    delta = np.asarray(delta, dtype=float).reshape(6)
    return Pose(so3_exp(delta[:3]), delta[3:].copy())


def pose_log(pose: Pose) -> np.ndarray:
    """Tangent 6-vector [omega, v] of a pose; inverse of pose_exp."""
    return np.concatenate([so3_log(pose.rotation), pose.translation])


@dataclass(frozen=True)
class PoseNoise:
    """Scalar pose uncertainty: rotation and translation standard deviations."""

    sigma_theta: float  # radians
    sigma_t: float  # meters

    def __post_init__(self):
        if self.sigma_theta < 0.0 or self.sigma_t < 0.0:
            raise ValueError("pose noise standard deviations must be nonnegative")


def yaw_pose(yaw: float, x: float = 0.0, y: float = 0.0, z: float = 0.0) -> Pose:
    """Planar pose: rotation about Z by ``yaw`` plus translation (x, y, z)."""
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return Pose(rot, np.array([x, y, z], dtype=float))


def quat_wxyz_from_rotation(rotation: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a rotation matrix, w >= 0."""
    m = np.asarray(rotation, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def rotation_from_quat_wxyz(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a (w, x, y, z) quaternion; normalizes on read."""
    q = np.asarray(q, dtype=float).reshape(4)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise DegenerateGeometryError("zero quaternion has no rotation")
    w, x, y, z = q / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_rotation(rng: np.random.Generator, max_angle: float = np.pi * 0.9) -> np.ndarray:
    """Uniform random axis, uniform angle in [0, max_angle); for tests/sims."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0.0, max_angle))
