"""Small SO(3)/SE(3) helpers on plain numpy arrays.

Quaternions are stored scalar-first, ``(w, x, y, z)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_EYE3 = np.eye(3)


def skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rpy_to_matrix(rpy):
    """Fixed-axis roll-pitch-yaw: ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    r, p, y = rpy
    return rot_z(y) @ rot_y(p) @ rot_x(r)


def axis_angle(axis, angle):
    """Rodrigues' formula for a unit ``axis``."""
    k = skew(axis)
    return _EYE3 + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def exp_so3(w):
    theta = float(np.linalg.norm(w))
    if theta < 1e-12:
        return _EYE3 + skew(w)
    return axis_angle(np.asarray(w) / theta, theta)


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R):
    """Shepperd's method; returns a unit quaternion with ``w >= 0``."""
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_exp(w):
    """Quaternion of the rotation vector ``w``."""
    theta = float(np.linalg.norm(w))
    if theta < 1e-12:
        return np.array([1.0, 0.5 * w[0], 0.5 * w[1], 0.5 * w[2]])
    s = np.sin(0.5 * theta) / theta
    return np.array([np.cos(0.5 * theta), s * w[0], s * w[1], s * w[2]])


def log_so3(R):
    """Rotation vector (axis * angle, angle in [0, pi]) of ``R``."""
    q = matrix_to_quat(R)
    v = q[1:]
    n = float(np.linalg.norm(v))
    if n < 1e-15:
        return 2.0 * v
    return 2.0 * np.arctan2(n, q[0]) * v / n


def right_jacobian_inv(phi):
    """Inverse right Jacobian of SO(3): maps body angular velocity to ``d log``."""
    theta = float(np.linalg.norm(phi))
    k = skew(phi)
    if theta < 1e-6:
        return _EYE3 + 0.5 * k + (k @ k) / 12.0
    coef = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return _EYE3 + 0.5 * k + coef * (k @ k)


def wrap_angle(a):
    """Wrap into (-pi, pi]."""
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    if w == -np.pi:
        return np.pi
    return float(w)


def yaw_of(R):
    return float(np.arctan2(R[1, 0], R[0, 0]))


@dataclass(frozen=True, eq=False)
class FrameTransform:
    """Rigid transform; ``rotation`` is a 3x3 orthonormal matrix.

    ``a @ b`` composes (apply ``b`` first, then ``a``), and ``a @ point``
    maps a 3-vector.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def from_quaternion(cls, quat, translation=(0.0, 0.0, 0.0)):
        q = np.asarray(quat, dtype=float)
        return cls(quat_to_matrix(q / np.linalg.norm(q)), np.asarray(translation, dtype=float))

    @classmethod
    def from_rpy(cls, rpy=(0.0, 0.0, 0.0), translation=(0.0, 0.0, 0.0)):
        return cls(rpy_to_matrix(rpy), np.asarray(translation, dtype=float))

    @property
    def quaternion(self):
        return matrix_to_quat(self.rotation)

    def inverse(self):
        Rt = self.rotation.T
        return FrameTransform(Rt, -Rt @ self.translation)

    def __matmul__(self, other):
        if isinstance(other, FrameTransform):
            return FrameTransform(
                self.rotation @ other.rotation,
                self.rotation @ other.translation + self.translation,
            )
        return self.rotation @ np.asarray(other) + self.translation

    def __eq__(self, other):
        if not isinstance(other, FrameTransform):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __repr__(self):
        return f"FrameTransform(quat={self.quaternion.round(6).tolist()}, t={self.translation.round(6).tolist()})"
