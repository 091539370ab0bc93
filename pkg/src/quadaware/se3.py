"""Rotation-group helpers and the tracking-error maps.

Quaternions are stored as ``[w, x, y, z]`` (Hamilton convention) and map
body-frame vectors into the inertial frame, so ``R(q) @ v_body = v_world``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import cos, sin, sqrt

import numpy as np

SKEW_TOL = 1e-9

E3 = np.array([0.0, 0.0, 1.0])


def hat(v) -> np.ndarray:
    """Map a 3-vector to the skew-symmetric matrix with ``hat(v) @ w == v x w``."""
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def cross(a, b) -> np.ndarray:
    """3-vector cross product without the axis bookkeeping of ``np.cross``."""
    a0, a1, a2 = float(a[0]), float(a[1]), float(a[2])
    b0, b1, b2 = float(b[0]), float(b[1]), float(b[2])
    return np.array([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0])


def vee(m: np.ndarray, tol: float = SKEW_TOL) -> np.ndarray:
    """Inverse of :func:`hat`.

    Raises ``ValueError`` if ``m`` is not skew-symmetric to within ``tol``
    (Frobenius norm of ``m + m.T``); that only happens when something upstream
    has corrupted the matrix.
    """
    m = np.asarray(m, dtype=float)
    defect = np.linalg.norm(m + m.T)
    if defect > tol:
        raise ValueError(f"vee: matrix is not skew-symmetric (defect {defect:.3e})")
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def _vee_unchecked(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    if not n > 0.0:
        raise ValueError("cannot normalize a zero quaternion")
    return q / n


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a[0], a[1], a[2], a[3]
    bw, bx, by, bz = b[0], b[1], b[2], b[3]
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q[0], q[1], q[2], q[3]
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns the representative with ``w >= 0``."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = 2.0 * sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = quat_normalize(q)
    return -q if q[0] < 0.0 else q


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    axis = axis / n
    s = sin(0.5 * angle)
    return np.array([cos(0.5 * angle), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_exp(rotvec) -> np.ndarray:
    """Quaternion of the rotation ``exp(hat(rotvec))``."""
    rotvec = np.asarray(rotvec, dtype=float)
    return quat_from_axis_angle(rotvec, float(np.linalg.norm(rotvec)))


def rot_z(theta: float) -> np.ndarray:
    c, s = cos(theta), sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def orthonormality_defect(m: np.ndarray) -> float:
    """``||M^T M - I||_F``."""
    return float(np.linalg.norm(m.T @ m - np.eye(3)))


@dataclass(frozen=True)
class Rotation:
    """Unit quaternion wrapper; the matrix form is built on demand."""

    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", quat_normalize(self.q))

    @classmethod
    def identity(cls) -> Rotation:
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> Rotation:
        return cls(matrix_to_quat(m))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> Rotation:
        return cls(quat_from_axis_angle(axis, angle))

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def compose(self, other: Rotation) -> Rotation:
        """``self * other`` (apply ``other`` first)."""
        return Rotation(quat_multiply(self.q, other.q))

    def inverse(self) -> Rotation:
        w, x, y, z = self.q
        return Rotation(np.array([w, -x, -y, -z]))


def _as_matrix(r) -> np.ndarray:
    return r.matrix() if isinstance(r, Rotation) else np.asarray(r, dtype=float)


def attitude_error(R, R_d) -> np.ndarray:
    """``e_R = 0.5 * vee(R_d^T R - R^T R_d)``; accepts matrices or :class:`Rotation`."""
    R = _as_matrix(R)
    R_d = _as_matrix(R_d)
    m = R_d.T @ R
    return 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])


def rate_error(R, R_d, omega, omega_d) -> np.ndarray:
    """``e_w = w - R^T R_d w_d``."""
    R = _as_matrix(R)
    R_d = _as_matrix(R_d)
    return np.asarray(omega, dtype=float) - R.T @ (R_d @ np.asarray(omega_d, dtype=float))


def stack_error(e_p, e_v, e_R, e_w) -> np.ndarray:
    """Stacked 12-vector in the order (e_p, e_v, e_R, e_w)."""
    return np.concatenate([np.asarray(e_p, float), np.asarray(e_v, float),
                           np.asarray(e_R, float), np.asarray(e_w, float)])
