"""IMU intrinsics from stationary pieces held in several orientations.

At rest an accelerometer measures ``M_a * (|g| u) + b_a`` with ``u`` the
unknown unit gravity direction of that piece, so every piece adds two
unknowns and three equations: one net scalar constraint. Six pieces
determine the diagonal scale and the bias; the off-diagonal
(non-orthogonality) terms need at least nine. The gyroscope only sees its
bias; its scale has no excitation at rest and is reported as such.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..lie import so3_exp
from ..sensors import ImuIntrinsics
from .layout import sphere_basis
from .solver import SolverOptions, levenberg_marquardt

_UPPER = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
_DIAG = [(0, 0), (1, 1), (2, 2)]


class ObservabilityError(ValueError):
    pass


@dataclass
class StationaryPiece:
    a: np.ndarray  # (n, 3) raw accelerometer samples
    w: np.ndarray  # (n, 3) raw gyroscope samples


@dataclass
class StationaryCalibration:
    intrinsics: ImuIntrinsics
    gravity_directions: np.ndarray  # (k, 3) unit vectors in the accelerometer frame
    used: list[int]
    rejected: dict[int, str] = field(default_factory=dict)
    unobservable: list[str] = field(default_factory=list)
    cost: float = float("nan")
    gravity_magnitude: float = 9.81

    @property
    def gravity_vectors(self) -> np.ndarray:
        return self.gravity_magnitude * self.gravity_directions


def check_stationary(piece: StationaryPiece, accel_std: float, gyro_std: float) -> str | None:
    """Reason the piece is not stationary, or None."""
    if len(piece.a) < 2:
        return "fewer than two samples"
    sa = float(np.max(np.std(piece.a, axis=0)))
    sw = float(np.max(np.std(piece.w, axis=0)))
    if sa > accel_std:
        return f"accelerometer spread {sa:.3g} exceeds {accel_std:.3g}"
    if sw > gyro_std:
        return f"gyroscope spread {sw:.3g} exceeds {gyro_std:.3g}"
    return None


def calibrate_imu_intrinsics_stationary(pieces: list[StationaryPiece], gravity_magnitude: float = 9.81,
                                        sigma_accel: float = 0.02, accel_std: float = 0.1,
                                        gyro_std: float = 0.01) -> StationaryCalibration:
    rejected = {}
    used = []
    for i, p in enumerate(pieces):
        why = check_stationary(p, accel_std, gyro_std)
        if why is None:
            used.append(i)
        else:
            rejected[i] = why
    if len(used) < 6:
        raise ObservabilityError(f"{len(used)} stationary pieces, at least 6 distinct orientations are needed")
    means = np.array([pieces[i].a.mean(axis=0) for i in used])
    counts = np.array([len(pieces[i].a) for i in used], dtype=float)
    dirs = means / np.linalg.norm(means, axis=1, keepdims=True)
    sv = np.linalg.svd(dirs, compute_uv=False)
    if sv[-1] < 0.1 * sv[0]:
        raise ObservabilityError("gravity directions of the pieces are (nearly) coplanar")
    entries = _UPPER if len(used) >= 9 else _DIAG
    unobservable = ["gyroscope scale and misalignment (no rotation while stationary)"]
    if entries is _DIAG:
        unobservable.insert(0, "accelerometer non-orthogonality (needs at least 9 orientations)")
    k = len(used)
    nm = len(entries)
    g = float(gravity_magnitude)
    weight = np.sqrt(counts)[:, None] / sigma_accel

    def unpack(x):
        M = np.zeros((3, 3))
        for v, (i, j) in zip(x["m"], entries):
            M[i, j] = v
        return M

    def residual(x):
        M = unpack(x)
        pred = g * x["u"] @ M.T + x["b"]
        return ((means - pred) * weight).ravel()

    def cost(x):
        r = residual(x)
        return 0.5 * float(r @ r)

    def retract(x, d):
        u = x["u"].copy()
        for j in range(k):
            u[j] = so3_exp(d[nm + 3 + 2 * j: nm + 5 + 2 * j] @ sphere_basis(u[j])) @ u[j]
            u[j] /= np.linalg.norm(u[j])
        return {"m": x["m"] + d[:nm], "b": x["b"] + d[nm:nm + 3], "u": u}

    def lin(x):
        r0 = residual(x)
        n = nm + 3 + 2 * k
        J = np.zeros((r0.size, n))
        for c in range(n):
            h = 1e-7
            e = np.zeros(n)
            e[c] = h
            J[:, c] = (residual(retract(x, e)) - residual(retract(x, -e))) / (2 * h)
        return r0, J, 0.5 * float(r0 @ r0)

    x0 = {"m": np.array([1.0 if i == j else 0.0 for i, j in entries]), "b": np.zeros(3), "u": dirs}
    x, rep = levenberg_marquardt(x0, lin, cost, retract, SolverOptions(max_iterations=100))
    b_w = np.concatenate([pieces[i].w for i in used]).mean(axis=0)
    intr = ImuIntrinsics(M_a=unpack(x), b_a=x["b"], b_w=b_w)
    return StationaryCalibration(intr, x["u"], used, rejected, unobservable, rep.final_cost, g)


def calibrate_rig_stationary(pieces: dict[str, list[StationaryPiece]], **kwargs) -> dict[str, StationaryCalibration]:
    """Per-IMU stationary calibration; keyword arguments go to the single-IMU routine."""
    return {name: calibrate_imu_intrinsics_stationary(p, **kwargs) for name, p in pieces.items()}
