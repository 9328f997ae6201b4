"""Synthetic world: true trajectory, rig, environment and every sensor stream.

The true trajectory is itself a pair of cubic splines (rotation and
position) on a grid anchored at ``t = 0``, so an estimator grid with the
same spacing and anchor can represent it exactly.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .config import ConfigError, RigConfig, SensorSpec
from .data import CameraStream, ImuStream, LidarStream, MeasurementSet, OdometryStream, RadarStream
from .kinematics import evaluate_motion, imu_ideal, predicted_doppler, rotate, rotate_t, sensor_pose
from .lie import quat_to_rot, rot_to_quat, so3_exp
from .sensors import CameraIntrinsics, ImuIntrinsics, imu_forward, project_masked
from .spline import KnotGrid, R3Spline, So3Spline

TRUTH_PADDING = 0.5


def rng_for(seed: int, *keys: str) -> np.random.Generator:
    """Counter-based stream keyed by the seed and string labels."""
    entropy = [int(seed) & 0xFFFFFFFF] + [zlib.crc32(k.encode()) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass
class Plane:
    normal: np.ndarray
    d: float
    center: np.ndarray | None = None
    axes: np.ndarray | None = None  # (2, 3) in-plane unit axes of a finite patch
    half: np.ndarray | None = None  # half extents along ``axes``

    def to_dict(self):
        out = {"normal": self.normal.tolist(), "d": float(self.d)}
        if self.center is not None:
            out.update(center=self.center.tolist(), axes=self.axes.tolist(), half=self.half.tolist())
        return out

    @classmethod
    def from_dict(cls, d):
        if "center" in d:
            return cls(np.asarray(d["normal"]), float(d["d"]), np.asarray(d["center"]),
                       np.asarray(d["axes"]), np.asarray(d["half"]))
        return cls(np.asarray(d["normal"]), float(d["d"]))


@dataclass
class SensorTruth:
    kind: str
    rotation: np.ndarray
    translation: np.ndarray
    time_offset: float = 0.0
    readout_time: float = 0.0
    visual_scale: float = 1.0
    map_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    map_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    imu_intrinsics: ImuIntrinsics | None = None
    cam_intrinsics: CameraIntrinsics | None = None

    def to_dict(self):
        d = {
            "kind": self.kind,
            "rotation_quat_wxyz": rot_to_quat(self.rotation).tolist(),
            "translation_m": self.translation.tolist(),
            "time_offset_s": float(self.time_offset),
        }
        if self.kind == "camera":
            d["readout_time_s"] = float(self.readout_time)
            d["visual_scale"] = float(self.visual_scale)
            d["intrinsics"] = self.cam_intrinsics.to_dict()
        if self.kind in ("lidar", "camera"):
            d["map_rotation_quat_wxyz"] = rot_to_quat(self.map_rotation).tolist()
            d["map_translation_m"] = self.map_translation.tolist()
        if self.kind == "imu":
            d["intrinsics"] = self.imu_intrinsics.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        st = cls(
            kind=d["kind"],
            rotation=quat_to_rot(np.asarray(d["rotation_quat_wxyz"])),
            translation=np.asarray(d["translation_m"], dtype=float),
            time_offset=float(d["time_offset_s"]),
            readout_time=float(d.get("readout_time_s", 0.0)),
            visual_scale=float(d.get("visual_scale", 1.0)),
        )
        if "map_rotation_quat_wxyz" in d:
            st.map_rotation = quat_to_rot(np.asarray(d["map_rotation_quat_wxyz"]))
            st.map_translation = np.asarray(d["map_translation_m"], dtype=float)
        if d["kind"] == "imu":
            st.imu_intrinsics = ImuIntrinsics.from_dict(d.get("intrinsics"))
        if d["kind"] == "camera":
            st.cam_intrinsics = CameraIntrinsics.from_dict(d["intrinsics"])
        return st


@dataclass
class GroundTruthScenario:
    rot_spline: So3Spline
    pos_spline: R3Spline
    gravity: np.ndarray
    reference: str
    sensors: dict[str, SensorTruth]
    planes: list[Plane]
    landmarks: np.ndarray
    seed: int
    duration: float

    def motion(self, t, rot_order=2, want=("p", "v", "a")):
        return evaluate_motion(self.rot_spline, self.pos_spline, "translation", t, rot_order, want)

    def to_dict(self):
        return {
            "reference_imu": self.reference,
            "seed": self.seed,
            "duration_s": self.duration,
            "gravity_mps2": self.gravity.tolist(),
            "rot_spline": self.rot_spline.to_dict(),
            "pos_spline": self.pos_spline.to_dict(),
            "sensors": {k: v.to_dict() for k, v in self.sensors.items()},
            "planes": [p.to_dict() for p in self.planes],
            "landmarks": self.landmarks.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            rot_spline=So3Spline.from_dict(d["rot_spline"]),
            pos_spline=R3Spline.from_dict(d["pos_spline"]),
            gravity=np.asarray(d["gravity_mps2"], dtype=float),
            reference=d["reference_imu"],
            sensors={k: SensorTruth.from_dict(v) for k, v in d["sensors"].items()},
            planes=[Plane.from_dict(p) for p in d["planes"]],
            landmarks=np.asarray(d["landmarks"], dtype=float).reshape(-1, 3),
            seed=int(d["seed"]),
            duration=float(d["duration_s"]),
        )


@dataclass
class NoiseSpec:
    accel: float = 0.0
    gyro: float = 0.0
    doppler: float = 0.0
    radar_pos: float = 0.0
    lidar: float = 0.0
    pixel: float = 0.0
    odom_rot: float = 0.0
    odom_pos: float = 0.0
    outlier_fraction: float = 0.0

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if v < 0:
                raise ValueError(f"noise level {k} must be non-negative")
        if self.outlier_fraction > 1:
            raise ValueError("outlier fraction must lie in [0, 1]")

    @classmethod
    def for_sensor(cls, spec: SensorSpec, scale: float = 1.0, outlier_fraction: float = 0.0):
        n = spec.noise
        return cls(
            accel=scale * n.get("accel", 0.0),
            gyro=scale * n.get("gyro", 0.0),
            doppler=scale * n.get("doppler", 0.0),
            radar_pos=scale * n.get("position", 0.0),
            lidar=scale * n.get("range", 0.0),
            pixel=scale * n.get("pixel", 0.0),
            odom_rot=scale * n.get("odom_rot", 0.0),
            odom_pos=scale * n.get("odom_pos", 0.0),
            outlier_fraction=outlier_fraction,
        )


def generate_trajectory(seed: int, duration: float, excitation: dict, dt: float = 0.05,
                        padding: float = TRUTH_PADDING):
    """Multi-axis sinusoidal rotation and position knots.

    Each axis gets a third of the squared amplitude, at slightly different
    frequencies around the base so that no axis stays in phase with another.
    """
    if duration < 4 * dt:
        raise ConfigError(f"duration {duration} s is shorter than four knot spacings")
    rng = rng_for(seed, "trajectory")
    grid = KnotGrid.covering(0.0, duration, dt, padding, anchor=0.0)
    t = grid.knot_times()
    amp_r = float(excitation.get("angular_amplitude", 0.0))
    amp_p = float(excitation.get("linear_amplitude", 0.0))
    f = float(excitation.get("frequency", 0.5))
    ph_r = rng.uniform(0, 2 * np.pi, 3)
    ph_p = rng.uniform(0, 2 * np.pi, 3)
    fr = f * np.array([0.9, 1.0, 1.1])
    fp = f * np.array([0.85, 1.05, 1.2])
    phi = amp_r / np.sqrt(3) * np.sin(2 * np.pi * fr * t[:, None] + ph_r)
    pos = amp_p / np.sqrt(3) * np.sin(2 * np.pi * fp * t[:, None] + ph_p)
    return So3Spline(grid, so3_exp(phi)), R3Spline(grid, pos)


def box_room(size: float) -> list[Plane]:
    half = size / 2.0
    planes = []
    for axis in range(3):
        for sign in (1.0, -1.0):
            n = np.zeros(3)
            n[axis] = sign  # inward facing
            planes.append(Plane(n, half))
    return planes


def _patch(center, normal, half):
    n = np.asarray(normal, dtype=float)
    n /= np.linalg.norm(n)
    a = np.cross(n, [0.0, 0.0, 1.0] if abs(n[2]) < 0.9 else [1.0, 0.0, 0.0])
    a /= np.linalg.norm(a)
    b = np.cross(n, a)
    c = np.asarray(center, dtype=float)
    return Plane(n, float(-n @ c), c, np.stack([a, b]), np.asarray(half, dtype=float))


def default_environment(size: float, n_landmarks: int, rng) -> tuple[list[Plane], np.ndarray]:
    """Box room plus two tilted interior patches, landmarks scattered on all surfaces."""
    planes = box_room(size)
    s = size / 10.0
    planes.append(_patch([2.5 * s, 1.5 * s, -1.0 * s], [-0.8, -0.3, 0.5], [1.0 * s, 1.0 * s]))
    planes.append(_patch([-2.0 * s, -2.5 * s, 1.0 * s], [0.4, 0.8, -0.45], [1.0 * s, 1.0 * s]))
    per_patch = max(n_landmarks // 20, 0)
    per_wall = (n_landmarks - 2 * per_patch) // 6
    counts = [per_wall] * 6 + [per_patch, per_patch]
    counts[0] += n_landmarks - sum(counts)
    pts = []
    half = size / 2.0
    for plane, cnt in zip(planes, counts):
        if cnt <= 0:
            continue
        if plane.center is None:
            axis = int(np.argmax(np.abs(plane.normal)))
            p = rng.uniform(-half + 0.2, half - 0.2, (cnt, 3))
            p[:, axis] = -plane.d * plane.normal[axis]
        else:
            uv = rng.uniform(-1.0, 1.0, (cnt, 2)) * plane.half * 0.95
            p = plane.center + uv @ plane.axes
        pts.append(p)
    return planes, np.concatenate(pts) if pts else np.zeros((0, 3))


def check_planes(planes: list[Plane]) -> None:
    if len(planes) < 4:
        raise ConfigError("LiDAR simulation needs at least 4 planes")
    normals = np.array([p.normal for p in planes])
    if np.linalg.matrix_rank(normals, tol=1e-3) < 3:
        raise ConfigError("plane normals do not span 3D; LiDAR geometry is degenerate")


def ray_cast(origins, dirs, planes: list[Plane], min_range: float = 0.1):
    """Nearest positive hit of each ray; returns (range, plane index), inf / -1 on miss."""
    origins = np.asarray(origins, dtype=float)
    dirs = np.asarray(dirs, dtype=float)
    best = np.full(len(origins), np.inf)
    idx = np.full(len(origins), -1)
    for k, pl in enumerate(planes):
        denom = dirs @ pl.normal
        num = -(origins @ pl.normal + pl.d)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(np.abs(denom) > 1e-12, num / denom, np.inf)
        ok = (r > min_range) & (r < best)
        if pl.center is not None:
            hit = origins + r[:, None] * dirs
            rel = hit - pl.center
            inside = np.all(np.abs(rel @ pl.axes.T) <= pl.half, axis=1)
            ok &= inside
        best = np.where(ok, r, best)
        idx = np.where(ok, k, idx)
    return best, idx


def sensor_stamps(rate: float, offset: float, duration: float, phase: float = 0.0):
    """Sensor-clock stamps whose world time ``t + offset`` lies in ``[0, duration)``."""
    k0 = int(np.ceil((-offset - phase) * rate - 1e-9))
    k1 = int(np.floor((duration - offset - phase) * rate - 1e-9))
    return phase + np.arange(k0, k1 + 1) / rate


def _random_rotation(rng):
    return Rotation.random(random_state=rng).as_matrix()


def make_scenario(config: RigConfig, seed: int | None = None) -> GroundTruthScenario:
    seed = int(config["seed"] if seed is None else seed)
    sim = config["simulation"]
    duration = float(sim["duration"])
    rot, pos = generate_trajectory(seed, duration, sim["excitation"], config["spline"]["dt_rot"])
    rng = rng_for(seed, "rig")
    env_rng = rng_for(seed, "environment")
    planes, landmarks = default_environment(float(sim["room_size"]), int(sim["landmarks"]), env_rng)
    mag = float(config["gravity_magnitude"])
    gravity = np.array([0.0, 0.0, -mag])
    max_off = float(sim["max_true_offset"])
    sensors = {}
    for spec in config.sensors:
        # draw every random quantity regardless of overrides so streams stay aligned
        R = _random_rotation(rng)
        p = rng.uniform(-0.3, 0.3, 3)
        tau = rng.uniform(-max_off, max_off)
        beta = rng.uniform(0.5, 2.0)
        Rm = _random_rotation(rng)
        pm = rng.uniform(-2.0, 2.0, 3)
        truth = SensorTruth(spec.kind, R, p, tau, visual_scale=beta, map_rotation=Rm, map_translation=pm)
        if spec.name == config.reference_imu:
            truth.rotation, truth.translation, truth.time_offset = np.eye(3), np.zeros(3), 0.0
        if spec.kind == "camera":
            truth.readout_time = float(sim["readout_time"])
            truth.cam_intrinsics = spec.intrinsics
        if spec.kind == "imu":
            truth.imu_intrinsics = spec.intrinsics.copy()
        ov = spec.truth or {}
        if "rotation" in ov:
            truth.rotation = quat_to_rot(np.asarray(ov["rotation"], dtype=float))
        if "translation" in ov:
            truth.translation = np.asarray(ov["translation"], dtype=float)
        if "time_offset" in ov:
            truth.time_offset = float(ov["time_offset"])
        if "readout_time" in ov:
            truth.readout_time = float(ov["readout_time"])
        if "visual_scale" in ov:
            truth.visual_scale = float(ov["visual_scale"])
        if "map_rotation" in ov:
            truth.map_rotation = quat_to_rot(np.asarray(ov["map_rotation"], dtype=float))
        if "map_translation" in ov:
            truth.map_translation = np.asarray(ov["map_translation"], dtype=float)
        if "intrinsics" in ov and spec.kind == "imu":
            truth.imu_intrinsics = ImuIntrinsics.from_dict(ov["intrinsics"])
        sensors[spec.name] = truth
    return GroundTruthScenario(rot, pos, gravity, config.reference_imu, sensors, planes,
                               landmarks, seed, duration)


def synthesize_imu(sc: GroundTruthScenario, name: str, rate: float, noise: NoiseSpec) -> ImuStream:
    if rate <= 0:
        raise ValueError("rate must be positive")
    tr = sc.sensors[name]
    t = sensor_stamps(rate, tr.time_offset, sc.duration)
    m = sc.motion(t + tr.time_offset, 2, ("a",))
    f, w = imu_ideal(m, tr.rotation, tr.translation, sc.gravity)
    a_meas, w_meas = imu_forward(f, w, tr.imu_intrinsics or ImuIntrinsics())
    rng = rng_for(sc.seed, name, "imu")
    a_meas = a_meas + noise.accel * rng.standard_normal(a_meas.shape)
    w_meas = w_meas + noise.gyro * rng.standard_normal(w_meas.shape)
    return ImuStream(t, a_meas, w_meas)


def _directions(rng, n, az_range, el_range):
    az = rng.uniform(-az_range, az_range, n)
    el = rng.uniform(-el_range, el_range, n)
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=1)


def synthesize_radar(sc: GroundTruthScenario, name: str, rate: float, targets_per_scan: int,
                     noise: NoiseSpec) -> RadarStream:
    """Static targets on the room surfaces, a fixed share of each scan turned into movers."""
    tr = sc.sensors[name]
    rng = rng_for(sc.seed, name, "radar")
    stamps = sensor_stamps(rate, tr.time_offset, sc.duration)
    n = int(targets_per_scan)
    t = np.repeat(stamps, n)
    m = sc.motion(t + tr.time_offset, 1, ("p", "v"))
    R_s, p_s = sensor_pose(m, tr.rotation, tr.translation)
    d = _directions(rng, t.size, np.radians(60.0), np.radians(20.0))
    rng_r, _ = ray_cast(p_s, rotate(R_s, d), sc.planes)
    hit = np.isfinite(rng_r)
    p_local = d * np.where(hit, rng_r, 1.0)[:, None]
    v = predicted_doppler(m, tr.rotation, tr.translation, p_local)
    n_out = int(round(noise.outlier_fraction * n))
    outlier = np.zeros(t.size, dtype=bool)
    for k in range(len(stamps)):
        idx = rng.choice(n, size=n_out, replace=False) + k * n
        outlier[idx] = True
    extra = rng.uniform(0.5, 3.0, t.size) * rng.choice([-1.0, 1.0], t.size)
    v = v + np.where(outlier, extra, 0.0)
    p_meas = p_local + noise.radar_pos * rng.standard_normal(p_local.shape)
    v = v + noise.doppler * rng.standard_normal(v.shape)
    keep = hit
    return RadarStream(t[keep], p_meas[keep], v[keep], outlier[keep])


def synthesize_lidar(sc: GroundTruthScenario, name: str, scan_rate: float, points_per_scan: int,
                     noise: NoiseSpec) -> LidarStream:
    """Per-point stamped returns from a spinning-style scanner (+-30 deg elevation)."""
    check_planes(sc.planes)
    tr = sc.sensors[name]
    rng = rng_for(sc.seed, name, "lidar")
    stamps = sensor_stamps(scan_rate, tr.time_offset, sc.duration - 1.0 / scan_rate)
    n = int(points_per_scan)
    t = (stamps[:, None] + np.arange(n)[None, :] / (n * scan_rate)).ravel()
    scan = np.repeat(np.arange(len(stamps)), n)
    m = sc.motion(t + tr.time_offset, 0, ("p",))
    R_s, p_s = sensor_pose(m, tr.rotation, tr.translation)
    d = _directions(rng, t.size, np.pi, np.radians(30.0))
    r, plane = ray_cast(p_s, rotate(R_s, d), sc.planes)
    hit = np.isfinite(r)
    r_noisy = r + noise.lidar * rng.standard_normal(r.shape)
    p = d * np.where(hit, r_noisy, 1.0)[:, None]
    return LidarStream(t[hit], p[hit], scan[hit], plane[hit])


def camera_frame_stamps(sc: GroundTruthScenario, name: str, rate: float):
    tr = sc.sensors[name]
    margin = tr.readout_time / 2.0
    s = sensor_stamps(rate, tr.time_offset - margin, sc.duration - 2 * margin)
    return s


def synthesize_camera(sc: GroundTruthScenario, name: str, frame_rate: float, noise: NoiseSpec,
                      intrinsics: CameraIntrinsics | None = None):
    """Rolling-shutter feature observations of all visible landmarks.

    Returns ``(stream, info)``; ``info`` holds the metric depth of each
    observation in its exposure frame and the count of dropped
    (non-converged) projections.
    """
    tr = sc.sensors[name]
    intr = intrinsics or tr.cam_intrinsics
    rng = rng_for(sc.seed, name, "camera")
    stamps = camera_frame_stamps(sc, name, frame_rate)
    L = len(sc.landmarks)
    fi = np.repeat(np.arange(len(stamps)), L)
    li = np.tile(np.arange(L), len(stamps))
    t_frame = stamps[fi]

    def cam_point(t_world, lm_idx):
        m = sc.motion(t_world, 0, ("p",))
        R_c, p_c = sensor_pose(m, tr.rotation, tr.translation)
        return rotate_t(R_c, sc.landmarks[lm_idx] - p_c)

    # cheap global-shutter pass to discard hopeless pairs
    pc = cam_point(t_frame + tr.time_offset, li)
    uv, ok = project_masked(pc, intr)
    margin = 80.0
    ok &= (uv[:, 0] > -margin) & (uv[:, 0] < intr.width + margin)
    ok &= (uv[:, 1] > -margin) & (uv[:, 1] < intr.height + margin)
    fi, li, t_frame, uv = fi[ok], li[ok], t_frame[ok], uv[ok]
    h = float(intr.height)
    row = np.clip(uv[:, 1], 0.0, h)  # start from the global-shutter row
    converged = np.zeros(len(fi), dtype=bool)
    depth = np.zeros(len(fi))
    # row -> exposure time -> pose -> row; a contraction for realistic pixel speeds
    for _ in range(10):
        t_row = t_frame + tr.time_offset + (row / h - 0.5) * tr.readout_time
        pc = cam_point(t_row, li)
        uv, okz = project_masked(pc, intr)
        step = np.abs(uv[:, 1] - row)
        converged = (step < 1e-3) & okz
        row = np.where(okz, np.clip(uv[:, 1], -h, 2 * h), row)
        depth = pc[:, 2]
    t_row = t_frame + tr.time_offset + (row / h - 0.5) * tr.readout_time
    pc = cam_point(t_row, li)
    uv, okz = project_masked(pc, intr)
    depth = pc[:, 2]
    inside = okz & (uv[:, 0] >= 0) & (uv[:, 0] < intr.width) & (uv[:, 1] >= 0) & (uv[:, 1] < intr.height)
    dropped = int(np.sum(inside & ~converged))
    keep = inside & converged & (depth > 0.1)
    uv = uv[keep] + noise.pixel * rng.standard_normal((int(keep.sum()), 2))
    # noise may push a border observation off the sensor; clamp the row for timing
    uv[:, 1] = np.clip(uv[:, 1], 0.0, h - 1e-6)
    uv[:, 0] = np.clip(uv[:, 0], 0.0, intr.width - 1e-6)
    stream = CameraStream(t_frame[keep], li[keep].astype(np.int64), uv)
    return stream, {"depth": depth[keep], "dropped": dropped}


def synthesize_odometry(sc: GroundTruthScenario, name: str, kind: str, noise: NoiseSpec,
                        stamps: np.ndarray) -> OdometryStream:
    """Sensor poses expressed in an unknown map frame (camera: also up to scale)."""
    tr = sc.sensors[name]
    rng = rng_for(sc.seed, name, "odometry")
    m = sc.motion(stamps + tr.time_offset, 0, ("p",))
    R_s, p_s = sensor_pose(m, tr.rotation, tr.translation)
    Rm, pm = tr.map_rotation, tr.map_translation
    R_map = Rm.T @ R_s
    p_map = rotate_t(Rm, p_s - pm)
    R_map = R_map @ so3_exp(noise.odom_rot * rng.standard_normal((len(stamps), 3)))
    p_map = p_map + noise.odom_pos * rng.standard_normal(p_map.shape)
    landmarks = None
    if kind == "camera":
        beta = tr.visual_scale
        p_map = p_map / beta
        lm = rotate_t(Rm, sc.landmarks - pm)
        lm = (lm + noise.odom_pos * rng.standard_normal(lm.shape)) / beta
        landmarks = {i: lm[i] for i in range(len(lm))}
    return OdometryStream(np.asarray(stamps, dtype=float), R_map, p_map, landmarks)


@dataclass
class SimulationResult:
    scenario: GroundTruthScenario
    data: MeasurementSet
    info: dict


def simulate(config: RigConfig, seed: int | None = None) -> SimulationResult:
    sc = make_scenario(config, seed)
    sim = config["simulation"]
    scale = float(sim["noise_scale"])
    ms = MeasurementSet()
    info: dict = {}
    for spec in config.sensors:
        noise = NoiseSpec.for_sensor(spec, scale, float(sim["outlier_fraction"]) if spec.kind == "radar" else 0.0)
        if spec.kind == "imu":
            ms.imu[spec.name] = synthesize_imu(sc, spec.name, spec.rate, noise)
        elif spec.kind == "radar":
            n = int(spec.options.get("targets_per_scan", 30))
            ms.radar[spec.name] = synthesize_radar(sc, spec.name, spec.rate, n, noise)
        elif spec.kind == "lidar":
            n = int(spec.options.get("points_per_scan", 600))
            ls = synthesize_lidar(sc, spec.name, spec.rate, n, noise)
            ms.lidar[spec.name] = ls
            stamps = np.unique(ls.t[np.r_[True, np.diff(ls.scan) != 0]])
            ms.odometry[spec.name] = synthesize_odometry(sc, spec.name, "lidar", noise, stamps)
        else:
            cs, cinfo = synthesize_camera(sc, spec.name, spec.rate, noise, spec.intrinsics)
            ms.camera[spec.name] = cs
            info[spec.name] = cinfo
            stamps = camera_frame_stamps(sc, spec.name, spec.rate)
            ms.odometry[spec.name] = synthesize_odometry(sc, spec.name, "camera", noise, stamps)
    return SimulationResult(sc, ms, info)


def true_state(sc: GroundTruthScenario, mode: str = "translation", dt_scale: float | None = None):
    """The ground truth expressed as an estimator state.

    In translation mode the true position spline is used as is; the other
    modes get a least-squares spline through densely sampled true velocity
    or acceleration (exact up to the spline's approximation error).
    """
    from .spline import fit_r3
    from .state import CalibrationState, Extrinsic

    if mode == "translation":
        scale = sc.pos_spline.copy()
    else:
        order = 1 if mode == "velocity" else 2
        grid = sc.pos_spline.grid if dt_scale is None else KnotGrid.covering(
            0.0, sc.duration, dt_scale, TRUTH_PADDING - dt_scale, anchor=0.0)
        lo, hi = grid.support
        t = np.arange(lo, hi, grid.dt / 8.0)
        scale, _ = fit_r3(t, sc.pos_spline.evaluate(t, order), grid)
    kinds = {n: s.kind for n, s in sc.sensors.items()}
    st = CalibrationState(sc.reference, kinds, sc.rot_spline.copy(), scale, mode, sc.gravity.copy())
    for n, s in sc.sensors.items():
        st.extrinsics[n] = Extrinsic(s.rotation.copy(), s.translation.copy(), s.time_offset)
        if s.kind == "camera":
            st.readout[n] = s.readout_time
            st.visual_scale[n] = s.visual_scale
            st.cam_intrinsics[n] = s.cam_intrinsics
    return st


def six_face_directions() -> np.ndarray:
    return np.vstack([np.eye(3), -np.eye(3)])


def simulate_stationary(intrinsics: ImuIntrinsics, directions: np.ndarray, seed: int = 0, samples: int = 2000,
                        sigma_accel: float = 0.02, sigma_gyro: float = 0.002, gravity_magnitude: float = 9.81,
                        tilt: float = 0.05, moving: tuple[int, ...] = ()):
    """Static IMU pieces, one per (slightly tilted) gravity direction in the body frame.

    Pieces listed in ``moving`` get a slow oscillating rotation superimposed
    so they fail the stationarity test. Returns ``(pieces, true_directions)``.
    """
    from .estimator.intrinsics import StationaryPiece

    rng = rng_for(seed, "stationary")
    pieces, truth = [], []
    for i, d in enumerate(np.asarray(directions, dtype=float)):
        u = so3_exp(rng.normal(scale=tilt, size=3)) @ (d / np.linalg.norm(d))
        f = np.tile(gravity_magnitude * u, (samples, 1))
        w = np.zeros((samples, 3))
        if i in moving:
            s = np.linspace(0.0, 4 * np.pi, samples)
            w[:, 0] = 0.5 * np.sin(s)
            f = f + 2.0 * np.column_stack([np.sin(s), np.cos(s), np.zeros(samples)])
        a, wm = imu_forward(f, w, intrinsics)
        a = a + rng.normal(scale=sigma_accel, size=a.shape)
        wm = wm + rng.normal(scale=sigma_gyro, size=wm.shape)
        pieces.append(StationaryPiece(a, wm))
        truth.append(u)
    return pieces, np.array(truth)
