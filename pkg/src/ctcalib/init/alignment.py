"""One-shot sensor-inertial alignment.

The time axis is cut into fixed windows; the reference-body velocity at
every window boundary is an unknown shared by the two windows it
separates. Constraints:

* every IMU, every window: velocity change equals its integrated specific
  force plus gravity (and, when positions are observed, the same for the
  position change);
* radar scans: the ego-velocity rotated to the world equals the reference
  velocity propagated from the window start plus the lever-arm term;
* LiDAR / camera frames: the odometry position mapped to the world equals
  the reference position propagated from the window start plus the lever
  arm. A camera's odometry is scaled by an unknown factor.

Everything is linear once radar rotations are relaxed to general 3x3
matrices and gravity to a free vector; that solution seeds an LM solve
with radar rotations on SO(3) and gravity on the sphere of the configured
magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from ..data import ImuStream, OdometryStream
from ..lie import hat, normalize_rotation, so3_exp
from ..sensors import ImuIntrinsics
from ..spline import So3Spline
from ..estimator.layout import sphere_basis
from ..estimator.solver import SolverOptions, levenberg_marquardt
from .integration import InertialSamples
from .rotation import InitializationError


@dataclass
class ImuInput:
    stream: ImuStream
    rotation: np.ndarray
    offset: float
    sigma_accel: float
    rate: float
    intrinsics: ImuIntrinsics | None = None


@dataclass
class RadarInput:
    t: np.ndarray  # scan stamps, sensor clock
    v: np.ndarray  # radar-frame ego velocities
    offset: float
    sigma: float


@dataclass
class OdometryInput:
    kind: str  # "lidar" or "camera"
    odom: OdometryStream
    rotation: np.ndarray  # sensor-to-reference rotation from hand-eye
    offset: float
    sigma: float


@dataclass
class AlignmentResult:
    gravity: np.ndarray
    boundaries: np.ndarray
    velocities: np.ndarray
    positions: np.ndarray | None
    translations: dict[str, np.ndarray] = field(default_factory=dict)
    radar_rotations: dict[str, np.ndarray] = field(default_factory=dict)
    visual_scale: dict[str, float] = field(default_factory=dict)
    map_rotation: dict[str, np.ndarray] = field(default_factory=dict)
    map_offset: dict[str, np.ndarray] = field(default_factory=dict)
    costs: list[float] = field(default_factory=list)
    iterations: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def cost(self) -> float:
        return self.costs[-1] if self.costs else float("nan")


def map_rotation(rot: So3Spline, od: OdometryInput) -> np.ndarray:
    """Chordal mean of R(t) R_s R_map^T over the odometry frames."""
    k = rot.kinematics(od.odom.t + od.offset)
    M = np.einsum("nij,jk,nlk->il", k.rotation[k.valid], od.rotation, od.odom.R[k.valid])
    return normalize_rotation(M)


class _Columns:
    def __init__(self):
        self.size = 0
        self.blocks: dict[str, slice] = {}

    def add(self, name, n):
        self.blocks[name] = slice(self.size, self.size + n)
        self.size += n

    def __getitem__(self, name):
        return self.blocks[name]

    def __contains__(self, name):
        return name in self.blocks


class _Rows:
    def __init__(self):
        self.r, self.c, self.v, self.b, self.w = [], [], [], [], []
        self.n = 0

    def add(self, entries, rhs, sigma):
        """Append a 3-row block; ``entries`` is a list of (column slice/start, 3xk matrix)."""
        for start, M in entries:
            M = np.atleast_2d(M)
            rows = self.n + np.repeat(np.arange(3), M.shape[1])
            cols = start + np.tile(np.arange(M.shape[1]), 3)
            self.r.append(rows)
            self.c.append(cols)
            self.v.append(M.ravel())
        self.b.append(np.asarray(rhs, dtype=float))
        self.w.append(np.full(3, 1.0 / sigma))
        self.n += 3

    def build(self, ncols):
        A = sparse.csr_matrix((np.concatenate(self.v), (np.concatenate(self.r), np.concatenate(self.c))),
                              shape=(self.n, ncols))
        return A, np.concatenate(self.b), np.concatenate(self.w)


def window_boundaries(t_start, t_end, window):
    n = int(np.floor((t_end - t_start) / window))
    if n < 1:
        raise InitializationError("alignment", "data span is shorter than one alignment window")
    return t_start + window * np.arange(n + 1)


def one_shot_alignment(rot: So3Spline, imus: dict[str, ImuInput], reference: str,
                       radars: dict[str, RadarInput] | None = None,
                       odometry: dict[str, OdometryInput] | None = None,
                       gravity_magnitude: float = 9.81, window: float = 0.25,
                       options: SolverOptions | None = None) -> AlignmentResult:
    radars = radars or {}
    odometry = odometry or {}
    if not imus or reference not in imus:
        raise InitializationError("alignment", "the reference IMU is required")
    warnings = []
    samples = {n: InertialSamples(i.stream, rot, i.rotation, i.offset, i.intrinsics) for n, i in imus.items()}
    ref = samples[reference]
    lo, hi = rot.grid.support
    t0 = max(ref.t[0], lo) + 1e-9
    t1 = min(ref.t[-1], hi) - 1e-9
    tb = window_boundaries(t0, t1, window)
    W = len(tb) - 1
    has_pos = bool(odometry)
    others = [n for n in imus if n != reference]

    cols = _Columns()
    cols.add("g", 3)
    cols.add("v", 3 * (W + 1))
    if has_pos:
        cols.add("P", 3 * (W + 1))
    for n in others:
        cols.add(f"p:{n}", 3)
    for n in radars:
        cols.add(f"M:{n}", 9)
        cols.add(f"p:{n}", 3)
    pinned = next(iter(odometry), None)
    for n, od in odometry.items():
        cols.add(f"p:{n}", 3)
        if n != pinned:
            cols.add(f"o:{n}", 3)
        if od.kind == "camera":
            cols.add(f"beta:{n}", 1)

    def v_col(k):
        return cols["v"].start + 3 * k

    def P_col(k):
        return cols["P"].start + 3 * k

    I3 = np.eye(3)
    rows = _Rows()
    terms = {n: [s.terms(tb[k], tb[k + 1]) for k in range(W)] for n, s in samples.items()}
    for n, inp in imus.items():
        dt = window
        sv = inp.sigma_accel * np.sqrt(dt / inp.rate)
        sp = inp.sigma_accel * dt * np.sqrt(dt / (3.0 * inp.rate))
        for k, T in enumerate(terms[n]):
            if T is None:
                continue
            ent = [(v_col(k + 1), I3), (v_col(k), -I3), (cols["g"].start, -dt * I3)]
            if n != reference:
                ent.append((cols[f"p:{n}"].start, T.A))
            rows.add(ent, T.c, sv)
            if has_pos:
                ent = [(P_col(k + 1), I3), (P_col(k), -I3), (v_col(k), -dt * I3),
                       (cols["g"].start, -0.5 * dt * dt * I3)]
                if n != reference:
                    ent.append((cols[f"p:{n}"].start, T.B))
                rows.add(ent, T.d, sp)
            elif n != reference and terms[reference][k] is not None:
                rows.add([(cols[f"p:{n}"].start, T.B)], T.d - terms[reference][k].d, sp * np.sqrt(2.0))

    def locate(s):
        k = np.searchsorted(tb, s, side="right") - 1
        ok = (k >= 0) & (k < W)
        return np.clip(k, 0, W - 1), ok

    for n, inp in radars.items():
        s = inp.t + inp.offset
        k, ok = locate(s)
        kin = rot.kinematics(s, 1)
        ok &= kin.valid
        for j in np.flatnonzero(ok):
            T = ref.terms(tb[k[j]], s[j])
            if T is None:
                continue
            R = kin.rotation[j]
            dt = s[j] - tb[k[j]]
            Mv = np.stack([np.kron(R[c], inp.v[j]) for c in range(3)])
            ent = [(cols[f"M:{n}"].start, Mv), (cols[f"p:{n}"].start, -hat(kin.omega_world[j]) @ R),
                   (v_col(k[j]), -I3), (cols["g"].start, -dt * I3)]
            rows.add(ent, T.c, inp.sigma)

    R_map = {}
    for n, od in odometry.items():
        Rm = map_rotation(rot, od)
        R_map[n] = Rm
        s = od.odom.t + od.offset
        k, ok = locate(s)
        kin = rot.kinematics(s)
        ok &= kin.valid
        for j in np.flatnonzero(ok):
            T = ref.terms(tb[k[j]], s[j]) if s[j] > tb[k[j]] else None
            dt = s[j] - tb[k[j]]
            d = T.d if T is not None else np.zeros(3)
            pm = Rm @ od.odom.p[j]
            ent = [(P_col(k[j]), I3), (v_col(k[j]), dt * I3), (cols["g"].start, 0.5 * dt * dt * I3),
                   (cols[f"p:{n}"].start, kin.rotation[j])]
            if n != pinned:
                ent.append((cols[f"o:{n}"].start, -I3))
            if od.kind == "camera":
                ent.append((cols[f"beta:{n}"].start, -pm[:, None]))
                rhs = -d
            else:
                rhs = pm - d
            rows.add(ent, rhs, od.sigma)

    if rows.n == 0:
        raise InitializationError("alignment", "no alignment constraints could be built")
    A, b, w = rows.build(cols.size)
    Aw = (sparse.diags(w) @ A).toarray()
    bw = w * b
    x, *_ = np.linalg.lstsq(Aw, bw, rcond=None)

    # gravity observability: is the g block determined by the constraints?
    sv = np.linalg.svd(Aw, compute_uv=False)
    rank = int(np.sum(sv > sv[0] * 1e-10))
    if rank < cols.size:
        warnings.append(f"alignment system is rank deficient ({rank} of {cols.size} unknowns determined)")
    g = x[cols["g"]]
    g_observed = not (not has_pos and not radars)
    if not g_observed:
        # without any velocity/position source only differences between IMUs are observable;
        # take gravity opposite to the mean world-frame specific force
        f_mean = ref.f.mean(axis=0)
        g = -f_mean
        warnings.append("gravity direction is not observable from inertial data alone; "
                        "using the mean specific force (gravity and accelerometer bias are not separable)")
    if np.linalg.norm(g) < 1e-9:
        raise InitializationError("alignment", "gravity is degenerate")
    x[cols["g"]] = g / np.linalg.norm(g) * gravity_magnitude
    for n in radars:
        x[cols[f"M:{n}"]] = normalize_rotation(x[cols[f"M:{n}"]].reshape(3, 3)).ravel()

    # LM with gravity on the sphere and radar rotations on SO(3)
    nonlinear = {"g": 2}
    for n in radars:
        nonlinear[f"M:{n}"] = 3

    tan_cols = _Columns()
    for name, sl in cols.blocks.items():
        tan_cols.add(name, nonlinear.get(name, sl.stop - sl.start))

    def residual(xx):
        return Aw @ xx - bw

    def cost(xx):
        r = residual(xx)
        return 0.5 * float(r @ r)

    def tangent_map(xx):
        T = np.zeros((cols.size, tan_cols.size))
        for name, sl in cols.blocks.items():
            ts = tan_cols[name]
            if name == "g":
                gg = xx[sl]
                B = sphere_basis(gg).T
                T[sl, ts] = -hat(gg) @ B
            elif name in nonlinear:
                R = xx[sl].reshape(3, 3)
                T[sl, ts] = np.stack([(R @ hat(e)).ravel() for e in np.eye(3)], axis=1)
            else:
                T[sl, ts] = np.eye(sl.stop - sl.start)
        return T

    def lin(xx):
        r = residual(xx)
        return r, Aw @ tangent_map(xx), 0.5 * float(r @ r)

    def retract(xx, d):
        out = xx.copy()
        for name, sl in cols.blocks.items():
            ts = tan_cols[name]
            if name == "g":
                gg = xx[sl]
                out[sl] = so3_exp(sphere_basis(gg).T @ d[ts]) @ gg
            elif name in nonlinear:
                out[sl] = (xx[sl].reshape(3, 3) @ so3_exp(d[ts])).ravel()
            else:
                out[sl] = xx[sl] + d[ts]
        return out

    if not g_observed:
        # gravity stays fixed: drop its tangent columns by zeroing them
        def lin(xx, _lin=lin):  # noqa: F811
            r, J, c = _lin(xx)
            J[:, tan_cols["g"]] = 0.0
            return r, J, c

    x, rep = levenberg_marquardt(x, lin, cost, retract, options or SolverOptions(max_iterations=50))

    res = AlignmentResult(gravity=x[cols["g"]].copy(), boundaries=tb,
                          velocities=x[cols["v"]].reshape(-1, 3).copy(),
                          positions=x[cols["P"]].reshape(-1, 3).copy() if has_pos else None,
                          costs=rep.costs, iterations=rep.iterations, warnings=warnings)
    res.translations[reference] = np.zeros(3)
    for n in others:
        res.translations[n] = x[cols[f"p:{n}"]].copy()
    for n in radars:
        res.translations[n] = x[cols[f"p:{n}"]].copy()
        res.radar_rotations[n] = x[cols[f"M:{n}"]].reshape(3, 3).copy()
    for n, od in odometry.items():
        res.translations[n] = x[cols[f"p:{n}"]].copy()
        res.map_rotation[n] = R_map[n]
        res.map_offset[n] = x[cols[f"o:{n}"]].copy() if n != pinned else np.zeros(3)
        if od.kind == "camera":
            beta = float(x[cols[f"beta:{n}"]][0])
            if beta <= 0:
                raise InitializationError("alignment", f"non-positive visual scale for {n}")
            res.visual_scale[n] = beta
    return res

