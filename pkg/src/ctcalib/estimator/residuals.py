"""The five residual families.

Each family holds a vectorised block of measurements of one sensor. A
family declares the spline quantities it needs at each of its query times
(``queries``), and ``head`` maps those quantities plus the non-spline state
to residuals. Keeping the spline evaluation out of ``head`` lets the
problem chain analytic spline derivatives with cheap differences of the
head.

Rows whose query time falls outside the spline support (or whose
reprojected depth is not positive) are reported inactive and contribute
nothing.
"""

from __future__ import annotations

import numpy as np

from ..kinematics import Motion, imu_ideal, motion_at, predicted_doppler, rotate, rotate_t, sensor_pose
from ..sensors import CameraIntrinsics, normalized_ray, project_masked
from ..state import CalibrationState, Extrinsic

FAMILIES = ("gyro", "accel", "doppler", "surfel", "reproj")


def _extrinsic(state: CalibrationState, sensor: str) -> Extrinsic:
    e = state.extrinsics.get(sensor)
    return e if e is not None else Extrinsic()


class ResidualFamily:
    kind = ""
    dim = 1
    # (rotation derivative order, translational quantity) per query time
    queries: tuple[tuple[int, str | None], ...] = ((0, "p"),)

    def __init__(self, sensor: str, sigma: float, loss_scale: float | None):
        self.sensor = sensor
        self.sigma = float(sigma)
        self.loss_scale = None if loss_scale is None else float(loss_scale)

    @property
    def n(self) -> int:
        return len(self.t)

    @property
    def uses_scale(self) -> bool:
        return any(q is not None for _, q in self.queries)

    def query_times(self, state) -> list[np.ndarray]:
        return [self.t + _extrinsic(state, self.sensor).offset]

    def global_segments(self, state) -> list[str]:
        s = self.sensor
        return [f"rot:{s}", f"pos:{s}", f"offset:{s}"]

    def time_segments(self, state) -> list[str]:
        """Segments that move the query times (differenced through the splines)."""
        return [f"offset:{self.sensor}"]

    def extra_columns(self, layout):
        """Per-row column of a one-parameter-per-row block, or None."""
        return None

    def motions(self, state, jacobian: bool = False) -> list[Motion]:
        out = []
        for tq, (order, trans) in zip(self.query_times(state), self.queries):
            out.append(motion_at(state.rot_spline, state.scale_spline, state.scale_mode, tq, order, trans,
                                 deltas=state.rot_deltas(), jacobian=jacobian))
        return out

    def head(self, state, motions: list[Motion]) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def evaluate(self, state) -> tuple[np.ndarray, np.ndarray]:
        return self.head(state, self.motions(state))

    def describe(self) -> str:
        return f"{self.kind}:{self.sensor}"


def _finish(r, valid):
    r = np.where(valid[:, None], r, 0.0)
    return r, valid


class GyroResidual(ResidualFamily):
    """Predicted gyro output from the rotation spline minus the measured rate."""

    kind = "gyro"
    dim = 3
    queries = ((1, None),)

    def __init__(self, sensor, t, w, sigma, loss_scale=None):
        super().__init__(sensor, sigma, loss_scale)
        self.t = np.asarray(t, dtype=float)
        self.w = np.asarray(w, dtype=float).reshape(-1, 3)

    def global_segments(self, state):
        s = self.sensor
        return [f"rot:{s}", f"offset:{s}", f"intr:{s}"]

    def head(self, state, motions):
        m = motions[0]
        e = _extrinsic(state, self.sensor)
        w_i = rotate_t(m.R @ e.rotation, m.w)
        intr = state.imu_intrinsics.get(self.sensor)
        if intr is not None:
            w_i = w_i @ (intr.M_w @ intr.R_aw).T + intr.b_w
        return _finish(w_i - self.w, m.valid)


class AccelResidual(ResidualFamily):
    """Predicted specific force (with lever arm and gravity) minus the measurement."""

    kind = "accel"
    dim = 3
    queries = ((2, "a"),)

    def __init__(self, sensor, t, a, sigma, loss_scale=None):
        super().__init__(sensor, sigma, loss_scale)
        self.t = np.asarray(t, dtype=float)
        self.a = np.asarray(a, dtype=float).reshape(-1, 3)

    def global_segments(self, state):
        s = self.sensor
        return [f"rot:{s}", f"pos:{s}", f"offset:{s}", "gravity", f"intr:{s}"]

    def head(self, state, motions):
        m = motions[0]
        e = _extrinsic(state, self.sensor)
        f, _ = imu_ideal(m, e.rotation, e.translation, state.gravity)
        intr = state.imu_intrinsics.get(self.sensor)
        if intr is not None:
            f = f @ intr.M_a.T + intr.b_a
        return _finish(f - self.a, m.valid)


class DopplerResidual(ResidualFamily):
    """Measured radial speed minus the radial speed predicted for a static target."""

    kind = "doppler"
    dim = 1
    queries = ((1, "v"),)

    def __init__(self, sensor, t, p, v, sigma, loss_scale=None):
        super().__init__(sensor, sigma, loss_scale)
        self.t = np.asarray(t, dtype=float)
        self.p = np.asarray(p, dtype=float).reshape(-1, 3)
        self.v = np.asarray(v, dtype=float)

    def head(self, state, motions):
        m = motions[0]
        e = _extrinsic(state, self.sensor)
        pred = predicted_doppler(m, e.rotation, e.translation, self.p)
        return _finish((self.v - pred)[:, None], m.valid)


class SurfelResidual(ResidualFamily):
    """Signed distance of a world-transformed LiDAR point to its surfel plane."""

    kind = "surfel"
    dim = 1
    queries = ((0, "p"),)

    def __init__(self, sensor, t, p, normal, d, sigma, loss_scale=None):
        super().__init__(sensor, sigma, loss_scale)
        self.t = np.asarray(t, dtype=float)
        self.p = np.asarray(p, dtype=float).reshape(-1, 3)
        self.normal = np.asarray(normal, dtype=float).reshape(-1, 3)
        self.d = np.asarray(d, dtype=float)

    def head(self, state, motions):
        m = motions[0]
        e = _extrinsic(state, self.sensor)
        R_w, p_w = sensor_pose(m, e.rotation, e.translation)
        x = rotate(R_w, self.p) + p_w
        return _finish((np.sum(self.normal * x, axis=1) + self.d)[:, None], m.valid)


class ReprojResidual(ResidualFamily):
    """Anchor observation lifted with its inverse depth, reprojected into a later frame."""

    kind = "reproj"
    dim = 2
    queries = ((0, "p"), (0, "p"))

    def __init__(self, sensor, intr: CameraIntrinsics, t_anchor, uv_anchor, t_obs, uv_obs, landmark,
                 sigma, loss_scale=None):
        super().__init__(sensor, sigma, loss_scale)
        self.intr = intr
        self.t = np.asarray(t_anchor, dtype=float)
        self.uv_n = np.asarray(uv_anchor, dtype=float).reshape(-1, 2)
        self.t_s = np.asarray(t_obs, dtype=float)
        self.uv_s = np.asarray(uv_obs, dtype=float).reshape(-1, 2)
        self.landmark = np.asarray(landmark, dtype=np.int64)
        self.ray = normalized_ray(self.uv_n, intr) if len(self.t) else np.zeros((0, 3))
        h = float(intr.height)
        self.row_n = self.uv_n[:, 1] / h - 0.5
        self.row_s = self.uv_s[:, 1] / h - 0.5

    def query_times(self, state):
        e = _extrinsic(state, self.sensor)
        ro = state.readout.get(self.sensor, 0.0)
        return [self.t + e.offset + self.row_n * ro, self.t_s + e.offset + self.row_s * ro]

    def global_segments(self, state):
        s = self.sensor
        return [f"rot:{s}", f"pos:{s}", f"offset:{s}", f"readout:{s}", f"vscale:{s}"]

    def time_segments(self, state):
        return [f"offset:{self.sensor}", f"readout:{self.sensor}"]

    def extra_columns(self, layout):
        cols = layout.columns(f"invdepth:{self.sensor}")
        if cols.size == 0:
            return None
        return cols[self.landmark]

    def head(self, state, motions):
        mn, ms = motions
        e = _extrinsic(state, self.sensor)
        R_n, p_n = sensor_pose(mn, e.rotation, e.translation)
        R_s, p_s = sensor_pose(ms, e.rotation, e.translation)
        beta = state.visual_scale.get(self.sensor, 1.0)
        lam = state.inv_depth[self.sensor][self.landmark]
        P_n = self.ray * (beta / lam)[:, None]
        P_w = rotate(R_n, P_n) + p_n
        P_s = rotate_t(R_s, P_w - p_s)
        uv, ok = project_masked(P_s, self.intr)
        return _finish(uv - self.uv_s, mn.valid & ms.valid & ok)
