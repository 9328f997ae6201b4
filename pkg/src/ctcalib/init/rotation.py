"""Rotation spline and inertial rotations/offsets from gyroscope data alone."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data import ImuStream
from ..lie import so3_exp
from ..sensors import ImuIntrinsics
from ..spline import KnotGrid, So3Spline, fit_so3
from ..state import CalibrationState, Extrinsic
from ..estimator.problem import Problem
from ..estimator.residuals import GyroResidual
from ..estimator.solver import SolverOptions


class InitializationError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        self.detail = message
        super().__init__(f"[{stage}] {message}")


@dataclass
class StageResult:
    name: str
    costs: list[float] = field(default_factory=list)
    iterations: int = 0
    estimates: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self):
        return {"stage": self.name, "costs": list(self.costs), "iterations": self.iterations,
                "estimates": self.estimates, "warnings": list(self.warnings)}


def dead_reckon(t, w) -> np.ndarray:
    """Integrate body rates with the trapezoidal rule; the first orientation is identity."""
    t = np.asarray(t, dtype=float)
    w = np.asarray(w, dtype=float)
    steps = 0.5 * (w[1:] + w[:-1]) * np.diff(t)[:, None]
    inc = so3_exp(steps)
    R = np.empty((len(t), 3, 3))
    R[0] = np.eye(3)
    for k in range(len(inc)):
        R[k + 1] = R[k] @ inc[k]
    return R


def kabsch(src, dst, weights=None):
    """Rotation R minimising sum |R src_k - dst_k|^2; also returns the singular values."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=float)
    H = (dst * w[:, None]).T @ src
    U, S, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt, S


def _corrected_gyro(stream: ImuStream, intr: ImuIntrinsics | None):
    return stream.w if intr is None else intr.correct_gyro(stream.w)


def _gyro_family(name, stream, intr, sigma, loss, stride=1):
    w = _corrected_gyro(stream, intr)
    return GyroResidual(name, stream.t[::stride], w[::stride], sigma, loss)


def align_gyro_offset(rot: So3Spline, t, w, bound: float, step: float):
    """Grid search the clock offset of a gyroscope against the spline body rate.

    Each candidate offset is scored by the residual of the best rotation
    (Kabsch) mapping measured rates onto spline rates.
    """
    best = None
    for tau in np.arange(-bound, bound + 1e-12, step):
        k = rot.kinematics(t + tau, 1)
        ok = k.valid
        if ok.sum() < 10:
            continue
        R, _ = kabsch(w[ok], k.omega_body[ok])
        cost = float(np.mean(np.sum((w[ok] @ R.T - k.omega_body[ok]) ** 2, axis=1)))
        if best is None or cost < best[0]:
            best = (cost, float(tau), R)
    if best is None:
        raise InitializationError("rotation", "no gyroscope samples inside the spline support")
    return best[2], best[1], best[0]


def recover_rotation_spline(imus: dict[str, ImuStream], reference: str, grid: KnotGrid, settings: dict,
                            noise: dict[str, dict], intrinsics: dict[str, ImuIntrinsics] | None = None):
    """Fit the rotation spline and every non-reference IMU's rotation and offset.

    Returns ``(spline, {imu: Extrinsic}, StageResult)``. The first knot is
    held at the dead-reckoned start attitude (identity), which fixes the
    world frame to the reference IMU's first frame.
    """
    intrinsics = intrinsics or {}
    stage = StageResult("rotation")
    ref = imus[reference]
    w_ref = _corrected_gyro(ref, intrinsics.get(reference))
    R_dr = dead_reckon(ref.t, w_ref)
    # extend the dead-reckoned attitude over the padded grid by holding the ends
    spline = fit_so3(ref.t, R_dr, grid)
    kinds = {n: "imu" for n in imus}
    state = CalibrationState(reference, kinds, spline, None, "acceleration")
    for n in imus:
        state.extrinsics[n] = Extrinsic()
    loss = settings["loss_scales"]["gyro"]
    opts = SolverOptions.from_config(settings["solver"])
    bound = float(settings["offset_bound"])

    fam_ref = _gyro_family(reference, ref, intrinsics.get(reference), noise[reference]["gyro"], loss)
    frozen = ("gravity", "imu_extrinsics")
    prob = Problem([fam_ref], state, frozen=frozen, offset_bound=bound, pin_first_rot_knot=True)
    state, rep = prob.solve(state, opts)
    stage.costs += rep.costs
    stage.iterations += rep.iterations
    spread = np.std(w_ref, axis=0)
    if np.max(spread) < 1e-3:
        stage.warnings.append("near-constant angular rate: rotation excitation is insufficient")

    others = [n for n in imus if n != reference]
    step = float(settings["handeye"]["grid_step"])
    for n in others:
        s = imus[n]
        w = _corrected_gyro(s, intrinsics.get(n))
        R, tau, _ = align_gyro_offset(state.rot_spline, s.t, w, bound, step)
        state.extrinsics[n] = Extrinsic(R, np.zeros(3), tau)
    if others:
        fams = [fam_ref] + [_gyro_family(n, imus[n], intrinsics.get(n), noise[n]["gyro"], loss) for n in others]
        frozen = ("gravity", "pos:*")
        prob = Problem(fams, state, frozen=frozen, offset_bound=bound, pin_first_rot_knot=True)
        state, rep = prob.solve(state, opts)
        stage.costs += rep.costs
        stage.iterations += rep.iterations
    ext = {n: state.extrinsics[n] for n in imus}
    ext[reference] = Extrinsic()
    stage.estimates = {n: e.to_dict() for n, e in ext.items()}
    return state.rot_spline, ext, stage
