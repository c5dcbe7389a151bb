"""Small rotation / quaternion toolbox used across the package.

Conventions:
  - quaternions are (w, x, y, z), unit norm
  - rotation matrices map body coordinates to world coordinates
  - log/exp maps use rotation vectors (axis * angle, rad)
"""

from __future__ import annotations

import numpy as np


def cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross product of two 3-vectors (much faster than np.cross here)."""
    return np.array([
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(4)
    n = float(np.linalg.norm(q))
    if n < 1e-12:
        raise ValueError("cannot normalize near-zero quaternion")
    return q / n


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float).reshape(4)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_mul(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = np.asarray(q1, dtype=float).reshape(4)
    w2, x2, y2, z2 = np.asarray(q2, dtype=float).reshape(4)
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_exp(rotvec: np.ndarray) -> np.ndarray:
    """Unit quaternion for a rotation vector (axis * angle)."""
    v = np.asarray(rotvec, dtype=float).reshape(3)
    th = float(np.linalg.norm(v))
    if th < 1e-12:
        # first-order series keeps the map smooth through zero
        return quat_normalize(np.array([1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2]]))
    axis = v / th
    half = 0.5 * th
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_derivative(q: np.ndarray, omega_body: np.ndarray) -> np.ndarray:
    """dq/dt for body-frame angular velocity."""
    w = np.asarray(omega_body, dtype=float).reshape(3)
    return 0.5 * quat_mul(q, np.concatenate([[0.0], w]))


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of R; robust near identity and near pi."""
    R = np.asarray(R, dtype=float).reshape(3, 3)
    cos_th = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    th = float(np.arccos(cos_th))
    if th < 1e-10:
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if th > np.pi - 1e-6:
        # near pi: extract axis from the symmetric part
        A = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        # fix signs using off-diagonal terms
        k = int(np.argmax(axis))
        if axis[k] > 0:
            for j in range(3):
                if j != k:
                    axis[j] = A[j, k] / axis[k] * np.sign(1.0)
        axis = axis / max(np.linalg.norm(axis), 1e-12)
        # recover sign of the skew part
        w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        if np.dot(w, axis) < 0:
            axis = -axis
        return th * axis
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return th / (2.0 * np.sin(th)) * w


def svd_pinv(A: np.ndarray, rtol: float = 1e-8) -> np.ndarray:
    """Moore-Penrose pseudoinverse; singular values below rtol * sigma_max are dropped."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return A.T.copy()
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(A.T.shape)
    keep = s > rtol * s[0]
    s_inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return (Vt.T * s_inv) @ U.T
