"""Quaternion helpers for joint rotations.

Quaternions are stored (w, x, y, z) in float64 numpy arrays. All functions
broadcast over leading dimensions, so a whole track of shape (frames, joints, 4)
goes through in one call. Euler conversions delegate to scipy and use
intrinsic rotation orders ("ZXY" etc., matching BVH channel order).
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

_NLERP_DOT_THRESHOLD = 1.0 - 1e-9


def normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise ValueError("cannot normalize a zero quaternion")
    return q / norm

def canonicalize(q: np.ndarray) -> np.ndarray:
    """Flip sign so w >= 0 (quaternion double cover)."""
    q = np.asarray(q, dtype=np.float64)
    flip = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * flip


def euler_deg_to_quat(angles_deg: np.ndarray, order: str) -> np.ndarray:
    """Intrinsic euler angles in degrees (per `order`) to (w,x,y,z) quats.

    `angles_deg` has shape (..., 3) with components in the same order as the
    `order` string, exactly as they appear in a BVH MOTION row.
    """
    angles = np.asarray(angles_deg, dtype=np.float64)
    flat = angles.reshape(-1, 3)
    xyzw = Rotation.from_euler(order.upper(), flat, degrees=True).as_quat()
    wxyz = np.concatenate([xyzw[:, 3:4], xyzw[:, :3]], axis=1)
    return canonicalize(wxyz.reshape(angles.shape[:-1] + (4,)))


def quat_to_euler_deg(q: np.ndarray, order: str) -> np.ndarray:
    """(w,x,y,z) quats to intrinsic euler angles in degrees (per `order`)."""
    q = np.asarray(q, dtype=np.float64)
    flat = q.reshape(-1, 4)
    xyzw = np.concatenate([flat[:, 1:4], flat[:, 0:1]], axis=1)
    angles = Rotation.from_quat(xyzw).as_euler(order.upper(), degrees=True)
    return angles.reshape(q.shape[:-1] + (3,))


def slerp(q0: np.ndarray, q1: np.ndarray, t) -> np.ndarray:
    """Shortest-arc spherical interpolation, broadcasting over leading dims.

    `t` may be a scalar or an array broadcastable against the quats' leading
    shape. Inputs are assumed unit length; nearly parallel pairs fall back to
    normalized lerp.
    """
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)[..., np.newaxis]

    dot = np.sum(q0 * q1, axis=-1, keepdims=True)
    q1 = np.where(dot < 0.0, -q1, q1)
    dot = np.abs(dot)

    # Stable angles for the general branch; the near-parallel branch is
    # overwritten with nlerp below.
    dot_clamped = np.clip(dot, -1.0, 1.0)
    theta = np.arccos(dot_clamped)
    sin_theta = np.sin(theta)
    safe_sin = np.where(sin_theta < 1e-12, 1.0, sin_theta)
    w0 = np.sin((1.0 - t) * theta) / safe_sin
    w1 = np.sin(t * theta) / safe_sin
    out = w0 * q0 + w1 * q1

    near = np.broadcast_to(dot > _NLERP_DOT_THRESHOLD, out.shape)
    lerped = (1.0 - t) * q0 + t * q1
    out = np.where(near, lerped, out)
    return normalize(out)


def angle_between(q0: np.ndarray, q1: np.ndarray) -> np.ndarray:
    """Geodesic rotation angle in radians between unit quaternions.

    Uses the atan2 form (4 * atan2(|q0 - q1|, |q0 + q1|) after sign
    alignment), which stays well conditioned near zero where arccos loses
    half the mantissa; identical inputs give exactly 0.
    """
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    dot = np.sum(q0 * q1, axis=-1, keepdims=True)
    q1 = np.where(dot < 0.0, -q1, q1)
    diff = np.linalg.norm(q0 - q1, axis=-1)
    summ = np.linalg.norm(q0 + q1, axis=-1)
    return 4.0 * np.arctan2(diff, summ)
