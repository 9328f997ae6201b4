"""Rig kinematics shared by the simulator and the residuals.

Keeping a single code path for both sides means the true state reproduces
noise-free synthetic data to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spline import R3Spline, So3Spline, blending_weights

SCALE_MODES = ("acceleration", "velocity", "translation")


def rotate(R, v):
    return np.einsum("...ij,...j->...i", R, v)


def rotate_t(R, v):
    """``R^T v`` for stacks of matrices and vectors."""
    return np.einsum("...ji,...j->...i", R, v)


@dataclass
class Motion:
    R: np.ndarray
    w: np.ndarray | None = None  # world-frame angular velocity
    alpha: np.ndarray | None = None  # world-frame angular acceleration
    p: np.ndarray | None = None
    v: np.ndarray | None = None
    a: np.ndarray | None = None
    valid: np.ndarray | None = None
    # optional knot derivatives (see So3Spline.kinematics_jacobian)
    rot_first: np.ndarray | None = None
    d_R: np.ndarray | None = None
    d_w: np.ndarray | None = None
    d_alpha: np.ndarray | None = None
    scale_first: np.ndarray | None = None
    scale_weights: np.ndarray | None = None


def scale_order(mode: str, quantity: str) -> int | None:
    """Derivative order of the scale spline giving position/velocity/acceleration."""
    base = {"translation": 0, "velocity": 1, "acceleration": 2}[mode]
    need = {"p": 0, "v": 1, "a": 2}[quantity]
    k = need - base
    return k if k >= 0 else None


def evaluate_motion(rot: So3Spline, scale: R3Spline | None, mode: str, t, rot_order: int = 0,
                    want=("a",), deltas=None) -> Motion:
    """Reference-body motion at world times ``t``.

    ``want`` lists translational quantities among ``p``, ``v``, ``a``; each
    must be derivable from the scale-spline mode.
    """
    t = np.asarray(t, dtype=float)
    k = rot.kinematics(t, rot_order, deltas=deltas)
    m = Motion(R=k.rotation, w=k.omega_world, alpha=k.alpha_world, valid=k.valid)
    for q in want:
        order = scale_order(mode, q)
        if order is None:
            raise ValueError(f"{q!r} is not available from a {mode} spline")
        val, ok = scale.evaluate_masked(t, order)
        setattr(m, q, val)
        m.valid = m.valid & ok
    return m


def motion_at(rot: So3Spline, scale: R3Spline | None, mode: str, t, rot_order: int, trans: str | None,
              deltas=None, jacobian: bool = False) -> Motion:
    """Motion with at most one translational quantity, optionally with knot derivatives."""
    t = np.asarray(t, dtype=float)
    if jacobian:
        k = rot.kinematics_jacobian(t, rot_order, deltas=deltas)
    else:
        k = rot.kinematics(t, rot_order, deltas=deltas)
    m = Motion(R=k.rotation, w=k.omega_world, alpha=k.alpha_world, valid=k.valid)
    if jacobian:
        m.rot_first, m.d_R, m.d_w, m.d_alpha = k.first, k.d_rotation, k.d_omega, k.d_alpha
    if trans is not None:
        order = scale_order(mode, trans)
        if order is None:
            raise ValueError(f"{trans!r} is not available from a {mode} spline")
        val, ok = scale.evaluate_masked(t, order)
        setattr(m, trans, val)
        m.valid = m.valid & ok
        if jacobian:
            first, u, _ = scale.grid.locate(t)
            m.scale_first = first
            m.scale_weights = blending_weights(u, order, scale.grid.dt)
    return m


def imu_ideal(m: Motion, R_i, p_i, gravity):
    """Ideal specific force and angular rate of an IMU rigidly attached at ``(R_i, p_i)``."""
    R_wi = m.R @ R_i
    lever = rotate(m.R, p_i)
    a_i = m.a + np.cross(m.alpha, lever) + np.cross(m.w, np.cross(m.w, lever))
    f = rotate_t(R_wi, a_i - gravity)
    w = rotate_t(R_wi, m.w)
    return f, w


def sensor_velocity(m: Motion, p_s):
    """World velocity of a point fixed at ``p_s`` in the reference body."""
    return m.v + np.cross(m.w, rotate(m.R, p_s))


def sensor_pose(m: Motion, R_s, p_s):
    return m.R @ R_s, rotate(m.R, p_s) + m.p


def predicted_doppler(m: Motion, R_r, p_r, targets):
    """Radial speed of static targets as seen by a moving radar."""
    v_w = sensor_velocity(m, p_r)
    v_r = rotate_t(m.R @ R_r, v_w)
    n = np.linalg.norm(targets, axis=-1)
    return -np.sum(targets * v_r, axis=-1) / n


def select_scale_mode(counts: dict[str, int]) -> str:
    """Meaning of the linear scale spline for a rig composition.

    IMUs alone can only pin acceleration; radars add velocity; any LiDAR or
    camera supplies positions.
    """
    if counts.get("imu", 0) < 1:
        raise ValueError("the rig needs at least one IMU")
    if counts.get("lidar", 0) or counts.get("camera", 0):
        return "translation"
    if counts.get("radar", 0):
        return "velocity"
    return "acceleration"
