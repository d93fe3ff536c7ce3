"""Quaternion and rotation helpers shared by the binding and render stages.

Quaternions are w-x-y-z throughout. Forward functions are vectorized over a
leading N axis; each differentiable forward has a matching adjoint next to it.
"""

from __future__ import annotations

import numpy as np


def quat_normalize(q):
    """Normalize quaternions (N, 4). Raises on zero-norm rows, reporting the index."""
    norms = np.linalg.norm(q, axis=-1)
    bad = np.flatnonzero(norms < 1e-30)
    if bad.size:
        raise FloatingPointError(f"zero-norm quaternion at index {bad[0]}")
    return q / norms[:, None]


def quat_normalize_backward(q, grad_out):
    """Adjoint of quat_normalize: q raw input, grad_out on the normalized output."""
    norms = np.linalg.norm(q, axis=-1, keepdims=True)
    y = q / norms
    return (grad_out - y * np.sum(y * grad_out, axis=-1, keepdims=True)) / norms


def quat_multiply(a, b):
    """Hamilton product a ⊗ b for (N, 4) arrays (broadcastable)."""
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


def quat_multiply_backward_right(a, grad_out):
    """Adjoint of b ↦ a ⊗ b for fixed a (the product is linear in b)."""
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    gw, gx, gy, gz = grad_out[..., 0], grad_out[..., 1], grad_out[..., 2], grad_out[..., 3]
    return np.stack(
        [
            aw * gw + ax * gx + ay * gy + az * gz,
            -ax * gw + aw * gx + az * gy - ay * gz,
            -ay * gw - az * gx + aw * gy + ax * gz,
            -az * gw + ay * gx - ax * gy + aw * gz,
        ],
        axis=-1,
    )


def quat_to_matrix(q):
    """Rotation matrices (N, 3, 3) from unit quaternions (N, 4).

    Uses the unit-quaternion formula without renormalizing; callers own the
    unit-norm invariant and the adjoint differentiates exactly this map.
    """
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    n = q.shape[0]
    m = np.empty((n, 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def quat_to_matrix_backward(q, grad_m):
    """Adjoint of quat_to_matrix: grad_m is (N, 3, 3), returns (N, 4)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = grad_m
    gw = 2 * (x * (g[:, 2, 1] - g[:, 1, 2]) + y * (g[:, 0, 2] - g[:, 2, 0]) + z * (g[:, 1, 0] - g[:, 0, 1]))
    gx = 2 * (
        w * (g[:, 2, 1] - g[:, 1, 2])
        + y * (g[:, 1, 0] + g[:, 0, 1])
        + z * (g[:, 2, 0] + g[:, 0, 2])
        - 2 * x * (g[:, 1, 1] + g[:, 2, 2])
    )
    gy = 2 * (
        w * (g[:, 0, 2] - g[:, 2, 0])
        + x * (g[:, 1, 0] + g[:, 0, 1])
        + z * (g[:, 2, 1] + g[:, 1, 2])
        - 2 * y * (g[:, 0, 0] + g[:, 2, 2])
    )
    gz = 2 * (
        w * (g[:, 1, 0] - g[:, 0, 1])
        + x * (g[:, 2, 0] + g[:, 0, 2])
        + y * (g[:, 2, 1] + g[:, 1, 2])
        - 2 * z * (g[:, 0, 0] + g[:, 1, 1])
    )
    return np.stack([gw, gx, gy, gz], axis=-1)


def matrix_to_quat(m):
    """Quaternions (N, 4) from matrices (N, 3, 3) via the four-branch method.

    Works on arbitrary (not necessarily orthonormal) matrices; the result is
    not normalized. Used only on mesh-derived frames, which are constants in
    the backward pass.
    """
    m = np.asarray(m, dtype=np.float64)
    n = m.shape[0]
    q = np.empty((n, 4))
    t0 = 1.0 + m[:, 0, 0] + m[:, 1, 1] + m[:, 2, 2]
    t1 = 1.0 + m[:, 0, 0] - m[:, 1, 1] - m[:, 2, 2]
    t2 = 1.0 - m[:, 0, 0] + m[:, 1, 1] - m[:, 2, 2]
    t3 = 1.0 - m[:, 0, 0] - m[:, 1, 1] + m[:, 2, 2]
    branch = np.argmax(np.stack([t0, t1, t2, t3], axis=-1), axis=-1)

    sel = branch == 0
    if np.any(sel):
        s = 2.0 * np.sqrt(np.maximum(t0[sel], 1e-30))
        q[sel, 0] = 0.25 * s
        q[sel, 1] = (m[sel, 2, 1] - m[sel, 1, 2]) / s
        q[sel, 2] = (m[sel, 0, 2] - m[sel, 2, 0]) / s
        q[sel, 3] = (m[sel, 1, 0] - m[sel, 0, 1]) / s
    sel = branch == 1
    if np.any(sel):
        s = 2.0 * np.sqrt(np.maximum(t1[sel], 1e-30))
        q[sel, 0] = (m[sel, 2, 1] - m[sel, 1, 2]) / s
        q[sel, 1] = 0.25 * s
        q[sel, 2] = (m[sel, 0, 1] + m[sel, 1, 0]) / s
        q[sel, 3] = (m[sel, 0, 2] + m[sel, 2, 0]) / s
    sel = branch == 2
    if np.any(sel):
        s = 2.0 * np.sqrt(np.maximum(t2[sel], 1e-30))
        q[sel, 0] = (m[sel, 0, 2] - m[sel, 2, 0]) / s
        q[sel, 1] = (m[sel, 0, 1] + m[sel, 1, 0]) / s
        q[sel, 2] = 0.25 * s
        q[sel, 3] = (m[sel, 1, 2] + m[sel, 2, 1]) / s
    sel = branch == 3
    if np.any(sel):
        s = 2.0 * np.sqrt(np.maximum(t3[sel], 1e-30))
        q[sel, 0] = (m[sel, 1, 0] - m[sel, 0, 1]) / s
        q[sel, 1] = (m[sel, 0, 2] + m[sel, 2, 0]) / s
        q[sel, 2] = (m[sel, 1, 2] + m[sel, 2, 1]) / s
        q[sel, 3] = 0.25 * s
    return q


def axis_angle_to_matrix(v):
    """Rodrigues: one axis-angle 3-vector to a 3x3 rotation matrix."""
    v = np.asarray(v, dtype=np.float64)
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        return np.eye(3)
    axis = v / angle
    kx, ky, kz = axis
    k = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def quat_angle_distance(a, b):
    """Rotation-agnostic quaternion distance, up to sign: 1 - |<a, b>| on unit quats."""
    a = a / np.linalg.norm(a, axis=-1, keepdims=True)
    b = b / np.linalg.norm(b, axis=-1, keepdims=True)
    return 1.0 - np.abs(np.sum(a * b, axis=-1))
