"""Quaternion and rotation algebra used by every attitude computation.

Conventions, fixed once here and relied on everywhere else:

* Quaternions are plain float ndarrays of shape (4,), stored scalar-last:
  ``q = [qx, qy, qz, qo]`` with vector part ``q[:3]`` and scalar part ``q[3]``.
* ``rotmat(q)`` is the active rotation ``I + 2*qo*[qv x] + 2*[qv x]^2``.
  For a quaternion describing the attitude of frame X relative to frame Y,
  ``rotmat(q)`` maps X-frame components to Y-frame components.
* ``quat_mul`` is the Hamilton product with
  ``rotmat(quat_mul(p, q)) == rotmat(p) @ rotmat(q)``.
* Body-rate kinematics: ``qdot = 0.5 * Omega(w) @ q`` where ``w`` is the
  angular velocity of frame X relative to frame Y expressed in X (body) axes.

All functions are pure and operate on immutable inputs.
"""

from __future__ import annotations

import numpy as np

QUAT_IDENTITY = np.array([0.0, 0.0, 0.0, 1.0])

_UNIT_TOL = 1e-9


def skew(v):
    """Cross-product matrix: skew(v) @ w == cross(v, w)."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def quat_normalize(q):
    """Rescale q to unit norm. Raises on a near-zero quaternion."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("cannot normalize near-zero quaternion")
    return q / n


def quat_canonical(q):
    """Flip sign so the scalar part is non-negative (short-rotation branch)."""
    return -q if q[3] < 0.0 else np.asarray(q, dtype=float)


def quat_conjugate(q):
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_mul(p, q):
    """Hamilton product p * q (scalar-last storage)."""
    pv, po = p[:3], p[3]
    qv, qo = q[:3], q[3]
    out = np.empty(4)
    out[:3] = po * qv + qo * pv + np.cross(pv, qv)
    out[3] = po * qo - pv @ qv
    return out


def quat_to_rotmat(q):
    """Rotation matrix of a unit quaternion.

    Raises ValueError if the input norm deviates from 1 by more than 1e-9.
    """
    q = np.asarray(q, dtype=float)
    nrm = np.linalg.norm(q)
    if abs(nrm - 1.0) > _UNIT_TOL:
        raise ValueError(f"quaternion is not unit norm (|q| = {nrm!r})")
    vx = skew(q[:3])
    return np.eye(3) + 2.0 * q[3] * vx + 2.0 * (vx @ vx)


def rotmat_to_quat(R):
    """Quaternion (scalar part >= 0) of a rotation matrix, Shepperd's method."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t >= R[0, 0] and t >= R[1, 1] and t >= R[2, 2]:
        s = np.sqrt(1.0 + t) * 2.0
        q = np.array([(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s, 0.25 * s])
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([0.25 * s, (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s])
    elif R[1, 1] >= R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array([(R[0, 1] + R[1, 0]) / s, 0.25 * s,
                      (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array([(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s,
                      0.25 * s, (R[1, 0] - R[0, 1]) / s])
    return quat_canonical(quat_normalize(q))


def quat_from_axis_angle(axis, angle):
    """Unit quaternion for a rotation of `angle` radians about `axis`."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([np.sin(half) * axis, [np.cos(half)]])


def omega_matrix(w):
    """4x4 rate matrix: qdot = 0.5 * omega_matrix(w) @ q."""
    out = np.zeros((4, 4))
    out[:3, :3] = -skew(w)
    out[:3, 3] = w
    out[3, :3] = -w
    return out


def quat_derivative(q, w):
    """Quaternion rate 0.5 * Omega(w) @ q for body angular velocity w (rad/s).

    Equivalent to 0.5 * quat_mul(q, [w, 0]); the output is orthogonal to q,
    so exact integration preserves the norm.
    """
    qv, qo = q[:3], q[3]
    out = np.empty(4)
    out[:3] = 0.5 * (qo * w + np.cross(qv, w))
    out[3] = -0.5 * (w @ qv)
    return out


def quat_error(q_target, q_base):
    """Relative attitude of the target frame with respect to the base frame.

    Returns the canonical (scalar part >= 0) quaternion q such that
    ``quat_to_rotmat(q)`` maps target-frame components into base-frame
    components. Identity when the two attitudes coincide.
    """
    return quat_canonical(quat_mul(quat_conjugate(q_base), q_target))


def rotation_vector(q):
    """Rotation vector (axis * angle, rad) of a unit quaternion."""
    q = quat_canonical(q)
    sin_half = np.linalg.norm(q[:3])
    if sin_half < 1e-12:
        return 2.0 * q[:3]
    angle = 2.0 * np.arctan2(sin_half, q[3])
    return (angle / sin_half) * q[:3]


def is_rotation(R, tol=1e-12):
    """True if R is orthonormal with determinant +1 within tol."""
    R = np.asarray(R, dtype=float)
    return (
        np.abs(R.T @ R - np.eye(3)).max() <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )
