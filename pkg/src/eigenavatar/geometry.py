"""Rotation helpers: axis-angle exponential/log maps and their Jacobians."""
import numpy as np
from scipy.spatial.transform import Rotation

_SMALL = 1e-8


def skew(v):
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def axis_angle_to_matrix(aa):
    """Rodrigues' formula, batched over leading axes of ``aa`` (..., 3)."""
    aa = np.asarray(aa, dtype=float)
    theta = np.linalg.norm(aa, axis=-1)[..., None, None]
    K = skew(aa)
    t2 = theta * theta
    small = t2 < _SMALL
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    return np.eye(3) + a * K + b * (K @ K)


def matrix_to_axis_angle(R):
    R = np.asarray(R, dtype=float)
    flat = R.reshape(-1, 3, 3)
    out = Rotation.from_matrix(flat).as_rotvec()
    return out.reshape(R.shape[:-2] + (3,))


def right_jacobian(aa):
    """J_r with exp(aa + d) ~= exp(aa) exp(J_r(aa) d)."""
    aa = np.asarray(aa, dtype=float)
    theta = np.linalg.norm(aa, axis=-1)[..., None, None]
    K = skew(aa)
    t2 = theta * theta
    small = t2 < _SMALL
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    b = np.where(small, 1.0 / 6.0 - t2 / 120.0, (safe - np.sin(safe)) / (safe ** 3))
    return np.eye(3) - a * K + b * (K @ K)


def right_jacobian_inv(aa):
    aa = np.asarray(aa, dtype=float)
    theta = np.linalg.norm(aa, axis=-1)[..., None, None]
    K = skew(aa)
    t2 = theta * theta
    small = t2 < _SMALL
    safe = np.where(small, 1.0, theta)
    c = np.where(
        small,
        1.0 / 12.0 + t2 / 720.0,
        1.0 / (safe * safe) - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)),
    )
    return np.eye(3) + 0.5 * K + c * (K @ K)


def geodesic_angle(R1, R2):
    """Angle of R1^T R2 in radians, batched."""
    rel = np.swapaxes(np.asarray(R1), -1, -2) @ np.asarray(R2)
    return np.linalg.norm(matrix_to_axis_angle(rel), axis=-1)


def canonical_axis_angle(aa):
    """Map axis-angle vectors to magnitude in [0, pi]."""
    return matrix_to_axis_angle(axis_angle_to_matrix(aa))
