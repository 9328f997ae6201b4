"""Recovery of the linear scale spline (acceleration, velocity or translation).

With rotations, extrinsics and gravity fixed, every constraint on the scale
knots is linear, so each mode is one sparse weighted least-squares solve.
Radar clock offsets enter non-linearly; they are found by a grid search
over the linear solution followed by a joint LM polish.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from ..spline import KnotGrid, R3Spline, basis_matrix
from ..state import CalibrationState
from ..estimator.problem import Problem
from ..estimator.residuals import AccelResidual, DopplerResidual
from ..estimator.solver import SolverOptions
from .integration import InertialSamples
from .rotation import InitializationError

_RIDGE = 1e-9


@dataclass
class ScaleResult:
    spline: R3Spline
    map_offset: dict[str, np.ndarray] = field(default_factory=dict)
    radar_offsets: dict[str, float] = field(default_factory=dict)
    costs: list[float] = field(default_factory=list)
    iterations: int = 0
    warnings: list[str] = field(default_factory=list)


class _System:
    """Weighted sparse rows over flattened knots (3k + axis) plus extra columns."""

    def __init__(self, grid: KnotGrid, extra: int = 0):
        self.grid = grid
        self.nk = 3 * grid.count
        self.size = self.nk + extra
        self.blocks: list[sparse.csr_matrix] = []
        self.rhs: list[np.ndarray] = []

    def _inside(self, t):
        lo, hi = self.grid.support
        return (t >= lo) & (t < hi)

    def add_axiswise(self, t, order, values, sigma, extra=None):
        """Rows ``B(t)^(order) K[:, axis] (+ extra) = values[:, axis]`` for each axis."""
        ok = self._inside(t)
        t, values = t[ok], values[ok]
        if len(t) == 0:
            return
        B = sparse.kron(basis_matrix(self.grid, t, order), sparse.eye(3), format="csr")
        B.resize(B.shape[0], self.size)
        if extra is not None:
            start, coeff = extra
            E = sparse.csr_matrix((np.full(3 * len(t), coeff), (np.arange(3 * len(t)),
                                   np.tile(start + np.arange(3), len(t)))), shape=(3 * len(t), self.size))
            B = B + E
        self.blocks.append(B / sigma)
        self.rhs.append(values.ravel() / sigma)

    def add_projected(self, t, order, c, values, sigma):
        """Rows ``c_i . (B(t_i)^(order) K) = values_i``."""
        ok = self._inside(t)
        t, c, values = t[ok], c[ok], values[ok]
        if len(t) == 0:
            return
        Bc = basis_matrix(self.grid, t, order).tocoo()
        rows = np.repeat(Bc.row, 3)
        cols = (3 * Bc.col[:, None] + np.arange(3)).ravel()
        vals = (Bc.data[:, None] * c[Bc.row]).ravel()
        self.blocks.append(sparse.csr_matrix((vals / sigma, (rows, cols)), shape=(len(t), self.size)))
        self.rhs.append(values / sigma)

    def solve(self):
        if not self.blocks:
            raise InitializationError("scale", "no constraints on the scale spline")
        A = sparse.vstack(self.blocks).tocsr()
        b = np.concatenate(self.rhs)
        H = (A.T @ A).tocsc()
        ridge = _RIDGE * max(float(H.diagonal().max()), 1.0)
        x = spsolve(H + ridge * sparse.eye(self.size, format="csc"), A.T @ b)
        r = A @ x - b
        return x, 0.5 * float(r @ r)

    def knots(self, x):
        return x[: self.nk].reshape(-1, 3)


def _accel_rows(sys: _System, samples: dict[str, InertialSamples], lever: dict[str, np.ndarray], gravity,
                order: int, sigma: dict[str, float], stride: int = 1):
    for n, s in samples.items():
        a = s.f - np.einsum("nij,j->ni", s.K, lever[n]) + gravity
        sys.add_axiswise(s.t[::stride], order, a[::stride], sigma[n])


def _doppler_coefficients(state: CalibrationState, name: str, t, p):
    """Coefficients c and constant q with doppler = c . v + q at reference-body velocity v."""
    e = state.extrinsics[name]
    k = state.rot_spline.kinematics(t, 1)
    u = p / np.linalg.norm(p, axis=1, keepdims=True)
    Rw = k.rotation @ e.rotation
    c = -np.einsum("nij,nj->ni", Rw, u)
    lever = np.cross(k.omega_world, np.einsum("nij,j->ni", k.rotation, e.translation))
    return c, np.sum(c * lever, axis=1), k.valid


def _radar_rows(sys: _System, state, radars, order, offsets):
    for n, (stream, inlier, sigma) in radars.items():
        t = stream.t[inlier] + offsets[n]
        c, q, ok = _doppler_coefficients(state, n, t, stream.p[inlier])
        sys.add_projected(t[ok], order, c[ok], stream.v[inlier][ok] - q[ok], sigma)


def _doppler_problem(state, radars, accel_fams, free, settings):
    fams = [DopplerResidual(n, s.t[inl], s.p[inl], s.v[inl], sigma, settings["loss_scales"]["doppler"])
            for n, (s, inl, sigma) in radars.items()]
    fams += accel_fams
    frozen = [seg for seg in ("rot_knots", "scale_knots", "gravity") if seg not in free]
    frozen += ["imu_extrinsics", "lidar_extrinsics", "camera_extrinsics", "readout", "visual_scale",
               "imu_intrinsics"]
    return Problem(fams, state, frozen=frozen, offset_bound=float(settings["offset_bound"]))


def recover_scale_spline(mode: str, state: CalibrationState, grid: KnotGrid, imus: dict, settings: dict,
                         noise: dict[str, dict], radars: dict | None = None, odometry: dict | None = None,
                         alignment=None) -> ScaleResult:
    """Fit the scale spline for ``mode`` with everything else in ``state`` held fixed.

    ``imus`` maps name to ImuStream, ``radars`` to ``(RadarStream, inlier mask)``
    and ``odometry`` to OdometryStream. Translation mode needs the alignment
    result for map rotations, visual scales and map offsets. Radar offsets in
    ``state`` are updated in place and reported.
    """
    radars = radars or {}
    odometry = odometry or {}
    if mode == "translation" and not odometry:
        raise InitializationError("scale", "translation mode needs LiDAR or camera odometry")
    if mode == "velocity" and not radars:
        raise InitializationError("scale", "velocity mode needs a radar")
    from ..kinematics import scale_order
    order_a = scale_order(mode, "a")
    samples = {}
    for n, s in imus.items():
        e = state.extrinsics[n]
        samples[n] = InertialSamples(s, state.rot_spline, e.rotation, e.offset, state.imu_intrinsics.get(n))
    lever = {n: state.extrinsics[n].translation for n in imus}
    sig_a = {n: noise[n]["accel"] for n in imus}
    out = ScaleResult(spline=None)
    rad = {n: (s, inl, noise[n]["doppler"]) for n, (s, inl) in radars.items()}
    bound = float(settings["offset_bound"])
    step = float(settings["handeye"]["grid_step"])

    if mode == "acceleration":
        sys = _System(grid)
        _accel_rows(sys, samples, lever, state.gravity, order_a, sig_a)
        x, c = sys.solve()
        out.spline = R3Spline(grid, sys.knots(x))
        out.costs = [c]
        return out

    if mode == "velocity":
        def fit(offsets):
            sys = _System(grid)
            _accel_rows(sys, samples, lever, state.gravity, order_a, sig_a)
            _radar_rows(sys, state, rad, 0, offsets)
            x, c = sys.solve()
            return R3Spline(grid, sys.knots(x)), c

        offsets = {n: state.extrinsics[n].offset for n in radars}
        for n in radars:
            best = None
            for tau in np.arange(-bound, bound + 1e-12, step):
                offsets[n] = tau
                spl, c = fit(offsets)
                if best is None or c < best[0]:
                    best = (c, tau)
            offsets[n] = best[1]
        spl, c = fit(offsets)
        out.costs.append(c)
        for n in radars:
            state.extrinsics[n].offset = float(offsets[n])
        state.scale_spline, state.scale_mode = spl, mode
        accel = [AccelResidual(n, s.t, s.a, sig_a[n], settings["loss_scales"]["accel"]) for n, s in imus.items()]
        prob = _doppler_problem(state, rad, accel, {"scale_knots"}, settings)
        st, rep = prob.solve(state, SolverOptions.from_config(settings["solver"]))
        out.spline = st.scale_spline
        out.costs += rep.costs
        out.iterations = rep.iterations
        for n in radars:
            state.extrinsics[n] = st.extrinsics[n]
            out.radar_offsets[n] = st.extrinsics[n].offset
        return out

    # translation
    names = list(odometry)
    pinned = names[0]
    extra = {n: i for i, n in enumerate(names[1:])}
    sys = _System(grid, 3 * len(extra))
    _accel_rows(sys, samples, lever, state.gravity, order_a, sig_a)
    for n, od in odometry.items():
        e = state.extrinsics[n]
        s = od.t + e.offset
        k = state.rot_spline.kinematics(s)
        beta = alignment.visual_scale.get(n, 1.0)
        target = beta * od.p @ alignment.map_rotation[n].T - np.einsum("nij,j->ni", k.rotation, e.translation)
        ex = None if n == pinned else (sys.nk + 3 * extra[n], -1.0)
        sigma = noise[n]["odom_pos"]
        sys.add_axiswise(s[k.valid], 0, target[k.valid], sigma, ex)
    x, c = sys.solve()
    out.spline = R3Spline(grid, sys.knots(x))
    out.costs = [c]
    out.map_offset[pinned] = np.zeros(3)
    for n, i in extra.items():
        out.map_offset[n] = x[sys.nk + 3 * i: sys.nk + 3 * i + 3].copy()
    if radars:
        state.scale_spline, state.scale_mode = out.spline, mode
        base = {n: state.extrinsics[n].copy() for n in radars}
        for n in radars:
            best = None
            for tau in np.arange(-bound, bound + 1e-12, step):
                state.extrinsics[n].offset = tau
                rs, inl = radars[n]
                fam = DopplerResidual(n, rs.t[inl], rs.p[inl], rs.v[inl], rad[n][2])
                r, ok = fam.evaluate(state)
                c = float(np.mean(r[ok] ** 2)) if ok.any() else np.inf
                if best is None or c < best[0]:
                    best = (c, tau)
            state.extrinsics[n] = base[n]
            state.extrinsics[n].offset = best[1]
        prob = _doppler_problem(state, rad, [], set(), settings)
        st, rep = prob.solve(state, SolverOptions.from_config(settings["solver"]))
        out.iterations = rep.iterations
        out.costs += rep.costs
        for n in radars:
            state.extrinsics[n] = st.extrinsics[n]
            out.radar_offsets[n] = st.extrinsics[n].offset
    return out
