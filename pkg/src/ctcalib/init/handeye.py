"""Rotation-only hand-eye alignment of an odometry stream against the rotation spline."""

from __future__ import annotations

import numpy as np

from ..data import OdometryStream
from ..lie import so3_exp, so3_log
from ..spline import So3Spline
from ..estimator.solver import SolverOptions, levenberg_marquardt
from .rotation import InitializationError, kabsch


class DegenerateMotionError(InitializationError):
    pass


def relative_pairs(t, gap: float):
    """Index pairs (i, j) with t[j] - t[i] closest to ``gap`` (at least one step apart)."""
    t = np.asarray(t, dtype=float)
    if len(t) < 2:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    step = max(int(round(gap / np.median(np.diff(t)))), 1)
    i = np.arange(len(t) - step)
    return i, i + step


def _body_relative(rot: So3Spline, t0, t1, tau):
    k0 = rot.kinematics(t0 + tau)
    k1 = rot.kinematics(t1 + tau)
    dR = np.swapaxes(k0.rotation, 1, 2) @ k1.rotation
    return dR, k0.valid & k1.valid


def _residuals(R, tau, rot, t0, t1, dR_s):
    """log(R dR_s R^T dR_b^T) per pair, zero where the spline is not defined."""
    dR_b, ok = _body_relative(rot, t0, t1, tau)
    E = R @ dR_s @ R.T @ np.swapaxes(dR_b, 1, 2)
    r = so3_log(E)
    r[~ok] = 0.0
    return r


def rotation_hand_eye(odom: OdometryStream, rot: So3Spline, bound: float = 0.1, grid_step: float = 0.005,
                      gap: float = 0.2, stage: str = "handeye", min_excitation: float = 0.02):
    """Sensor-to-reference rotation and clock offset from relative odometry rotations.

    Returns ``(R, tau, info)``. Raises DegenerateMotionError when the
    relative rotations are too small (RMS angle below ``min_excitation`` rad)
    or their axes span fewer than two directions.
    """
    i, j = relative_pairs(odom.t, gap)
    if len(i) < 10:
        raise InitializationError(stage, f"only {len(i)} relative rotations, need at least 10")
    t0, t1 = odom.t[i], odom.t[j]
    dR_s = np.swapaxes(odom.R[i], 1, 2) @ odom.R[j]
    phi_s = so3_log(dR_s)
    sv = np.linalg.svd(phi_s, compute_uv=False)
    rms = sv[0] / np.sqrt(len(phi_s))
    if rms < min_excitation:
        raise DegenerateMotionError(stage, f"no rotational excitation: relative rotations average "
                                           f"{np.degrees(rms):.2f} deg")
    if sv[1] < 0.05 * sv[0]:
        axis = np.linalg.svd(phi_s)[2][0]
        raise DegenerateMotionError(stage, f"relative rotations share one axis {np.round(axis, 3).tolist()}: "
                                           "the rotation about it is unobservable")
    # coarse search: log(dR_b) = R log(dR_s) for the right offset
    best = None
    for tau in np.arange(-bound, bound + 1e-12, grid_step):
        dR_b, ok = _body_relative(rot, t0, t1, tau)
        if ok.sum() < 10:
            continue
        phi_b = so3_log(dR_b[ok])
        R, _ = kabsch(phi_s[ok], phi_b)
        cost = float(np.mean(np.sum((phi_s[ok] @ R.T - phi_b) ** 2, axis=1)))
        if best is None or cost < best[0]:
            best = (cost, R, float(tau))
    if best is None:
        raise InitializationError(stage, "odometry does not overlap the rotation spline")
    x0 = (best[1], best[2])

    def cost(x):
        r = _residuals(x[0], x[1], rot, t0, t1, dR_s)
        return 0.5 * float(np.sum(r * r))

    def lin(x):
        r0 = _residuals(x[0], x[1], rot, t0, t1, dR_s).ravel()
        J = np.zeros((r0.size, 4))
        for c in range(4):
            h = 1e-6
            rp = _residuals(*retract(x, h * np.eye(4)[c]), rot, t0, t1, dR_s).ravel()
            rm = _residuals(*retract(x, -h * np.eye(4)[c]), rot, t0, t1, dR_s).ravel()
            J[:, c] = (rp - rm) / (2 * h)
        return r0, J, 0.5 * float(r0 @ r0)

    def retract(x, d):
        return x[0] @ so3_exp(d[:3]), float(np.clip(x[1] + d[3], -bound, bound))

    (R, tau), rep = levenberg_marquardt(x0, lin, cost, retract, SolverOptions(max_iterations=50))
    info = {"pairs": int(len(i)), "grid_offset": best[2], "costs": rep.costs, "iterations": rep.iterations,
            "axis_spread": float(sv[1] / sv[0])}
    return R, tau, info
