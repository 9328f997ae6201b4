"""Dynamic initialization: rotations, front-ends, alignment and scale spline, in that order."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..config import ConfigError, RigConfig, check_sensor_counts
from ..data import MeasurementSet
from ..kinematics import select_scale_mode
from ..sensors import ImuIntrinsics
from ..spline import KnotGrid
from ..state import CalibrationState, Extrinsic
from .alignment import ImuInput, OdometryInput, RadarInput, one_shot_alignment
from .handeye import rotation_hand_eye
from .radar import radar_ego_velocities
from .rotation import InitializationError, StageResult, recover_rotation_spline
from .scale import recover_scale_spline


@dataclass
class InitializationResult:
    state: CalibrationState
    stages: list[StageResult] = field(default_factory=list)
    landmarks_world: dict[str, dict[int, np.ndarray]] = field(default_factory=dict)
    radar_inliers: dict[str, np.ndarray] = field(default_factory=dict)

    def log(self) -> list[dict]:
        return [s.to_dict() for s in self.stages]

    def save_log(self, path):
        with open(path, "w") as fh:
            json.dump(self.log(), fh, indent=2, default=_jsonable)

    @property
    def warnings(self) -> list[str]:
        return [w for s in self.stages for w in s.warnings]


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(type(x).__name__)


def _prior_intrinsics(config: RigConfig) -> dict[str, ImuIntrinsics]:
    """Configured IMU intrinsics that differ from identity (or all, when they are to be estimated)."""
    estimate = bool(config["batches"].get("estimate_imu_intrinsics", False))
    out = {}
    for s in config.of_kind("imu"):
        intr = s.intrinsics if s.intrinsics is not None else ImuIntrinsics()
        trivial = (np.allclose(intr.M_a, np.eye(3)) and intr.gyro_is_identity and not intr.b_a.any()
                   and not intr.b_w.any())
        if estimate or not trivial:
            out[s.name] = intr.copy()
    return out


def data_grids(config: RigConfig, ms: MeasurementSet):
    t = ms.imu[config.reference_imu].t
    sp = config["spline"]
    rot = KnotGrid.covering(t[0], t[-1], float(sp["dt_rot"]), float(sp["padding"]), anchor=0.0)
    scale = KnotGrid.covering(t[0], t[-1], float(sp["dt_scale"]), float(sp["padding"]), anchor=0.0)
    return rot, scale


def run_initialization(config: RigConfig, ms: MeasurementSet) -> InitializationResult:
    """Recover a complete first estimate of every state field from raw measurements."""
    errors = check_sensor_counts(config.counts)
    if errors:
        raise ConfigError(errors)
    ref = config.reference_imu
    if ref not in ms.imu:
        raise ConfigError(f"no data for the reference IMU {ref!r}")
    settings = config.settings
    noise = {s.name: s.noise for s in config.sensors}
    kinds = {s.name: s.kind for s in config.sensors}
    mode = select_scale_mode(config.counts)
    intr = _prior_intrinsics(config)
    rot_grid, scale_grid = data_grids(config, ms)
    bound = float(settings["offset_bound"])
    stages = []

    # 1. rotation spline and inertial rotations / offsets
    rot, imu_ext, st = recover_rotation_spline(ms.imu, ref, rot_grid, settings, noise, intr)
    stages.append(st)

    # 2. per-sensor front-ends
    ext = dict(imu_ext)
    he = StageResult("hand_eye")
    for name, od in ms.odometry.items():
        R, tau, info = rotation_hand_eye(od, rot, bound, float(settings["handeye"]["grid_step"]),
                                         stage=f"hand_eye:{name}")
        ext[name] = Extrinsic(R, np.zeros(3), tau)
        he.costs += info["costs"]
        he.iterations += info["iterations"]
        he.estimates[name] = {"rotation": R, "offset_s": tau, "pairs": info["pairs"]}
    if ms.odometry:
        stages.append(he)
    ego = {}
    if ms.radar:
        rs = StageResult("radar_ego_velocity")
        for name, s in ms.radar.items():
            ev = radar_ego_velocities(s, settings["radar_ransac"], seed=int(settings.get("seed", 0)))
            if len(ev.t) < 10:
                raise InitializationError("radar_ego_velocity", f"{name}: only {len(ev.t)} usable scans")
            ego[name] = ev
            rs.estimates[name] = {"scans": int(len(ev.t)), "rejected": ev.rejected,
                                  "inlier_fraction": float(ev.inlier.mean())}
        stages.append(rs)

    # 3. one-shot alignment, 4. scale spline (+ radar offsets). Radar clocks are
    # unknown during the first alignment; with radars present the pair is rerun
    # once with the offsets the scale stage recovered.
    radar_offsets = {n: 0.0 for n in ego}
    frame_ext = {n: e.copy() for n, e in ext.items()}
    for rpass in range(2 if ego else 1):
        ext = {n: e.copy() for n, e in frame_ext.items()}
        imu_in = {n: ImuInput(s, ext[n].rotation, ext[n].offset, noise[n]["accel"], config.sensor(n).rate,
                              intr.get(n)) for n, s in ms.imu.items()}
        rad_in = {n: RadarInput(ev.t, ev.v, radar_offsets[n], noise[n]["doppler"]) for n, ev in ego.items()}
        od_in = {n: OdometryInput(kinds[n], od, ext[n].rotation, ext[n].offset, noise[n]["odom_pos"])
                 for n, od in ms.odometry.items()}
        al = one_shot_alignment(rot, imu_in, ref, rad_in, od_in, float(settings["gravity_magnitude"]),
                                float(settings["alignment"]["window"]))
        st = StageResult("alignment", costs=list(al.costs), iterations=al.iterations, warnings=list(al.warnings))
        st.estimates = {"pass": rpass, "gravity": al.gravity, "translations": al.translations,
                        "visual_scale": al.visual_scale}
        stages.append(st)
        for n, p in al.translations.items():
            if n in ext:
                ext[n].translation = p.copy()
            else:
                ext[n] = Extrinsic(al.radar_rotations[n].copy(), p.copy(), radar_offsets[n])
        ext[ref] = Extrinsic()

        state = CalibrationState(ref, kinds, rot, None, mode, al.gravity.copy())
        state.extrinsics = ext
        state.imu_intrinsics = intr
        for s in config.of_kind("camera"):
            state.cam_intrinsics[s.name] = s.intrinsics
            state.readout[s.name] = float(s.intrinsics.readout_time)
            state.visual_scale[s.name] = al.visual_scale[s.name]

        radars = {n: (ms.radar[n], ego[n].inlier) for n in ego}
        sc = recover_scale_spline(mode, state, scale_grid, ms.imu, settings, noise, radars, ms.odometry, al)
        state.scale_spline = sc.spline
        state.scale_mode = mode
        st = StageResult(f"scale_spline:{mode}", costs=list(sc.costs), iterations=sc.iterations,
                         warnings=list(sc.warnings))
        st.estimates = {"pass": rpass, "radar_offsets_s": sc.radar_offsets}
        stages.append(st)
        radar_offsets = {n: float(sc.radar_offsets[n]) for n in ego}

    bad = state.check_finite()
    if bad:
        raise InitializationError("final", "non-finite estimates: " + ", ".join(bad))
    out = InitializationResult(state, stages, radar_inliers={n: ego[n].inlier for n in ego})
    for n, od in ms.odometry.items():
        if kinds[n] == "camera" and od.landmarks:
            beta = al.visual_scale[n]
            Rm = al.map_rotation[n]
            o = sc.map_offset.get(n, al.map_offset[n])
            out.landmarks_world[n] = {int(i): beta * Rm @ np.asarray(x) + o for i, x in od.landmarks.items()}
    return out
