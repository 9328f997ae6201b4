"""Independent reference implementations used as test oracles.

Nothing here imports the package's spline or Lie code: rotations go
through scipy and splines through the textbook matrix form.
"""

import numpy as np
from scipy.spatial.transform import Rotation

# uniform cubic B-spline, p(u) = [1 u u^2 u^3] M [P0 P1 P2 P3]
M_UNIFORM = np.array([
    [1.0, 4.0, 1.0, 0.0],
    [-3.0, 0.0, 3.0, 0.0],
    [3.0, -6.0, 3.0, 0.0],
    [-1.0, 3.0, -3.0, 1.0],
]) / 6.0

# cumulative form: lambda_j(u) = sum_{k >= j} of the uniform weights
M_CUMULATIVE = np.array([
    [6.0, 0.0, 0.0, 0.0],
    [5.0, 3.0, -3.0, 1.0],
    [1.0, 3.0, 3.0, -2.0],
    [0.0, 0.0, 0.0, 1.0],
]) / 6.0


def _segment(t, t0, dt):
    x = (t - t0) / dt
    s = int(np.floor(x))
    return s - 1, x - s


def r3_value(knots, t0, dt, t):
    """Position of a uniform cubic spline whose knot i sits at ``t0 + i dt``."""
    i, u = _segment(t, t0, dt)
    return np.array([1.0, u, u * u, u ** 3]) @ M_UNIFORM @ knots[i:i + 4]


def so3_value(knots, t0, dt, t):
    """Cumulative cubic rotation spline evaluated with scipy rotations."""
    i, u = _segment(t, t0, dt)
    lam = M_CUMULATIVE @ np.array([1.0, u, u * u, u ** 3])
    R = Rotation.from_matrix(knots[i])
    for j in (1, 2, 3):
        d = (Rotation.from_matrix(knots[i + j - 1]).inv() * Rotation.from_matrix(knots[i + j])).as_rotvec()
        R = R * Rotation.from_rotvec(lam[j] * d)
    return R.as_matrix()


def fd_derivative(f, t, h, order=1):
    if order == 1:
        return (f(t + h) - f(t - h)) / (2 * h)
    return (f(t + h) - 2 * f(t) + f(t - h)) / (h * h)


def fd_world_rate(rot_fn, t, h=1e-5):
    """World angular velocity from central differences of rotations."""
    rel = rot_fn(t + h) @ rot_fn(t - h).T
    return Rotation.from_matrix(rel).as_rotvec() / (2 * h)


def random_rotation(rng):
    return Rotation.random(random_state=rng).as_matrix()


def rotvec_exp(phi):
    return Rotation.from_rotvec(phi).as_matrix()


def angle_deg(Ra, Rb):
    return np.degrees(Rotation.from_matrix(Ra.T @ Rb).magnitude())
