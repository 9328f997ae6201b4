"""SO(3) helpers: hat, Exp/Log and the right Jacobian.

All functions accept a single vector / matrix or a stack of them along the
leading axes, e.g. ``so3_exp(phi)`` with ``phi.shape == (N, 3)`` returns an
``(N, 3, 3)`` array.
"""

from __future__ import annotations

import numpy as np

SMALL_ANGLE = 1e-8


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix so that ``hat(v) @ w == cross(v, w)``."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def _exp_coeffs(theta):
    # a = sin(t)/t, b = (1 - cos(t))/t^2, with 4th-order Taylor near zero
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, 2.0 * np.sin(0.5 * t) ** 2 / (t * t))
    return a, b


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rodrigues formula ``I + a*hat(phi) + b*hat(phi)^2``."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    a, b = _exp_coeffs(theta)
    K = hat(phi)
    K2 = K @ K
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + a[..., None, None] * K + b[..., None, None] * K2


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector with norm in ``[0, pi]``.

    Near pi the axis is read off the symmetric part of R, the sign fixed so
    that the component along the largest diagonal entry is positive.
    """
    R = np.asarray(R, dtype=float)
    single = R.ndim == 2
    Rs = R.reshape(-1, 3, 3)
    tr = np.trace(Rs, axis1=-2, axis2=-1)
    w = vee(Rs - np.swapaxes(Rs, -1, -2))  # = 2 sin(theta) * axis
    # atan2 keeps full precision for tiny angles where arccos does not
    theta = np.arctan2(0.5 * np.linalg.norm(w, axis=-1), 0.5 * (tr - 1.0))
    out = np.empty((Rs.shape[0], 3))

    small = theta < SMALL_ANGLE
    near_pi = np.pi - theta < 1e-6
    regular = ~(small | near_pi)

    if np.any(small):
        t2 = theta[small] ** 2
        # theta / (2 sin theta) ~ 1/2 + theta^2/12 + 7 theta^4/720
        out[small] = w[small] * (0.5 + t2 / 12.0 + 7.0 * t2 * t2 / 720.0)[:, None]
    if np.any(regular):
        th = theta[regular]
        out[regular] = w[regular] * (th / (2.0 * np.sin(th)))[:, None]
    if np.any(near_pi):
        for idx in np.flatnonzero(near_pi):
            out[idx] = _log_near_pi(Rs[idx], theta[idx], w[idx])
    return out[0] if single else out.reshape(R.shape[:-2] + (3,))


def _log_near_pi(R, theta, w):
    # R = I + sin(t) K + (1 - cos t) K^2 ; K^2 = n n^T - I
    B = (R + R.T) * 0.5 - np.cos(theta) * np.eye(3)
    B /= 1.0 - np.cos(theta)
    k = int(np.argmax(np.diag(R)))
    n = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
    n /= np.linalg.norm(n)
    if abs(np.pi - theta) > 1e-9:
        # away from exactly pi, sin(theta) carries the sign information
        if np.dot(n, w) < 0.0:
            n = -n
    return n * theta


def so3_right_jacobian(phi: np.ndarray) -> np.ndarray:
    """Jr with ``Exp(phi + d) ~= Exp(phi) Exp(Jr(phi) d)``."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    # t - sin t cancels badly for small t, so the series takes over early
    small = theta < 1e-3
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    # c1 = (1 - cos t)/t^2, c2 = (t - sin t)/t^3
    c1 = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, 2.0 * np.sin(0.5 * t) ** 2 / (t * t))
    c2 = np.where(small, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0, (t - np.sin(t)) / (t ** 3))
    K = hat(phi)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye - c1[..., None, None] * K + c2[..., None, None] * (K @ K)


def so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    return so3_right_jacobian(-np.asarray(phi, dtype=float))


def so3_right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    """Inverse of :func:`so3_right_jacobian` (valid for ``|phi| < pi``)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    small = theta < 1e-4
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    c = np.where(small, 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0,
                 1.0 / (t * t) - (1.0 + np.cos(t)) / (2.0 * t * np.sin(t)))
    K = hat(phi)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + 0.5 * K + c[..., None, None] * (K @ K)


def normalize_rotation(R: np.ndarray) -> np.ndarray:
    """Project onto SO(3) via SVD."""
    U, _, Vt = np.linalg.svd(R)
    D = np.ones(U.shape[:-2] + (3,))
    D[..., 2] = np.sign(np.linalg.det(U @ Vt))
    return (U * D[..., None, :]) @ Vt


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - z * w)
    R[..., 0, 2] = 2 * (x * z + y * w)
    R[..., 1, 0] = 2 * (x * y + z * w)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - x * w)
    R[..., 2, 0] = 2 * (x * z - y * w)
    R[..., 2, 1] = 2 * (y * z + x * w)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rot_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z) with w >= 0."""
    from scipy.spatial.transform import Rotation

    R = np.asarray(R, dtype=float)
    xyzw = Rotation.from_matrix(R.reshape(-1, 3, 3)).as_quat()
    q = np.concatenate([xyzw[:, 3:], xyzw[:, :3]], axis=1)
    q[q[:, 0] < 0] *= -1.0
    return q[0] if R.ndim == 2 else q.reshape(R.shape[:-2] + (4,))


def rot_to_euler_zyx_deg(R: np.ndarray) -> np.ndarray:
    """Yaw, pitch, roll in degrees (intrinsic ZYX)."""
    from scipy.spatial.transform import Rotation

    return Rotation.from_matrix(np.asarray(R, dtype=float)).as_euler("ZYX", degrees=True)


def geodesic_deg(Ra: np.ndarray, Rb: np.ndarray) -> np.ndarray:
    """Angle of ``Ra^T Rb`` in degrees."""
    Ra = np.asarray(Ra, dtype=float)
    Rb = np.asarray(Rb, dtype=float)
    rel = np.swapaxes(Ra, -1, -2) @ Rb
    return np.degrees(np.linalg.norm(so3_log(rel), axis=-1))


def rot_x(a: float) -> np.ndarray:
    return so3_exp(np.array([a, 0.0, 0.0]))


def rot_y(a: float) -> np.ndarray:
    return so3_exp(np.array([0.0, a, 0.0]))


def rot_z(a: float) -> np.ndarray:
    return so3_exp(np.array([0.0, 0.0, a]))
