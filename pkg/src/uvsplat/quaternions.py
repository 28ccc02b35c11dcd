"""Quaternion utilities with analytic reverse-mode derivatives.

Quaternions are stored as (w, x, y, z) rows in float64 arrays of shape
(..., 4). All functions are vectorized over leading dimensions.
"""

from __future__ import annotations

import numpy as np


def quat_identity(n: int) -> np.ndarray:
    q = np.zeros((n, 4))
    q[:, 0] = 1.0
    return q


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def normalize_backward(raw: np.ndarray, d_unit: np.ndarray) -> np.ndarray:
    """Adjoint of v -> v/|v| evaluated at the unnormalized input ``raw``."""
    norm = np.linalg.norm(raw, axis=-1, keepdims=True)
    unit = raw / norm
    dot = np.sum(unit * d_unit, axis=-1, keepdims=True)
    return (d_unit - unit * dot) / norm


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a ⊗ b."""
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_mul_left_backward(a: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. b of a ⊗ b given upstream d_out.

    a ⊗ b = L(a) b with L(a) the left-multiplication matrix, so the
    adjoint is L(a)^T d_out.
    """
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    dw, dx, dy, dz = d_out[..., 0], d_out[..., 1], d_out[..., 2], d_out[..., 3]
    return np.stack(
        [
            aw * dw + ax * dx + ay * dy + az * dz,
            -ax * dw + aw * dx + az * dy - ay * dz,
            -ay * dw - az * dx + aw * dy + ax * dz,
            -az * dw + ay * dx - ax * dy + aw * dz,
        ],
        axis=-1,
    )


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a unit quaternion; shape (..., 4) -> (..., 3, 3)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_to_rot_backward(q: np.ndarray, d_R: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the (unit) quaternion of quat_to_rot."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    g = d_R
    d_w = 2 * (
        -z * g[..., 0, 1] + y * g[..., 0, 2]
        + z * g[..., 1, 0] - x * g[..., 1, 2]
        - y * g[..., 2, 0] + x * g[..., 2, 1]
    )
    d_x = 2 * (
        y * g[..., 0, 1] + z * g[..., 0, 2]
        + y * g[..., 1, 0] - 2 * x * g[..., 1, 1] - w * g[..., 1, 2]
        + z * g[..., 2, 0] + w * g[..., 2, 1] - 2 * x * g[..., 2, 2]
    )
    d_y = 2 * (
        -2 * y * g[..., 0, 0] + x * g[..., 0, 1] + w * g[..., 0, 2]
        + x * g[..., 1, 0] + z * g[..., 1, 2]
        - w * g[..., 2, 0] + z * g[..., 2, 1] - 2 * y * g[..., 2, 2]
    )
    d_z = 2 * (
        -2 * z * g[..., 0, 0] - w * g[..., 0, 1] + x * g[..., 0, 2]
        + w * g[..., 1, 0] - 2 * z * g[..., 1, 1] + y * g[..., 1, 2]
        + x * g[..., 2, 0] + y * g[..., 2, 1]
    )
    return np.stack([d_w, d_x, d_y, d_z], axis=-1)


def rot_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w >= 0) from rotation matrices of shape (..., 3, 3).

    Shepperd's method: pick the largest of the four candidate pivots for
    numerical stability, then fix the sign so w is nonnegative.
    """
    R = np.asarray(R)
    batch = R.shape[:-2]
    Rf = R.reshape((-1, 3, 3))
    n = Rf.shape[0]
    q = np.empty((n, 4))
    tr = Rf[:, 0, 0] + Rf[:, 1, 1] + Rf[:, 2, 2]
    # candidate squared pivots: 1+tr, 1+2Rii-tr for i=0,1,2
    cand = np.stack(
        [
            1.0 + tr,
            1.0 + 2 * Rf[:, 0, 0] - tr,
            1.0 + 2 * Rf[:, 1, 1] - tr,
            1.0 + 2 * Rf[:, 2, 2] - tr,
        ],
        axis=1,
    )
    case = np.argmax(cand, axis=1)
    s = np.sqrt(np.maximum(cand[np.arange(n), case], 0.0)) * 2.0  # 4*pivot

    m = case == 0
    q[m, 0] = 0.25 * s[m]
    q[m, 1] = (Rf[m, 2, 1] - Rf[m, 1, 2]) / s[m]
    q[m, 2] = (Rf[m, 0, 2] - Rf[m, 2, 0]) / s[m]
    q[m, 3] = (Rf[m, 1, 0] - Rf[m, 0, 1]) / s[m]
    m = case == 1
    q[m, 0] = (Rf[m, 2, 1] - Rf[m, 1, 2]) / s[m]
    q[m, 1] = 0.25 * s[m]
    q[m, 2] = (Rf[m, 0, 1] + Rf[m, 1, 0]) / s[m]
    q[m, 3] = (Rf[m, 0, 2] + Rf[m, 2, 0]) / s[m]
    m = case == 2
    q[m, 0] = (Rf[m, 0, 2] - Rf[m, 2, 0]) / s[m]
    q[m, 1] = (Rf[m, 0, 1] + Rf[m, 1, 0]) / s[m]
    q[m, 2] = 0.25 * s[m]
    q[m, 3] = (Rf[m, 1, 2] + Rf[m, 2, 1]) / s[m]
    m = case == 3
    q[m, 0] = (Rf[m, 1, 0] - Rf[m, 0, 1]) / s[m]
    q[m, 1] = (Rf[m, 0, 2] + Rf[m, 2, 0]) / s[m]
    q[m, 2] = (Rf[m, 1, 2] + Rf[m, 2, 1]) / s[m]
    q[m, 3] = 0.25 * s[m]

    q *= np.where(q[:, :1] < 0.0, -1.0, 1.0)
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q.reshape(batch + (4,))


def axis_angle_rot(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a unit axis."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    kx, ky, kz = axis
    K = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)
