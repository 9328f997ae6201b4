"""Rig configuration: sensors, noise levels and algorithm settings."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .sensors import CameraIntrinsics, ImuIntrinsics

SENSOR_KINDS = ("imu", "radar", "lidar", "camera")

DEFAULT_NOISE = {
    "imu": {"accel": 0.02, "gyro": 0.002},
    "radar": {"doppler": 0.1, "position": 0.02},
    "lidar": {"range": 0.02, "odom_rot": 0.0035, "odom_pos": 0.01},
    "camera": {"pixel": 0.5, "odom_rot": 0.0035, "odom_pos": 0.01},
}

DEFAULT_RATES = {"imu": 200.0, "radar": 10.0, "lidar": 10.0, "camera": 20.0}

DEFAULTS: dict[str, Any] = {
    "gravity_magnitude": 9.81,
    "seed": 0,
    "spline": {"dt_rot": 0.05, "dt_scale": 0.05, "padding": 0.1},
    "offset_bound": 0.1,
    "alignment": {"window": 0.25},
    "handeye": {"grid_step": 0.005},
    "radar_ransac": {"iterations": 100, "threshold": 0.3, "min_inliers": 5},
    "association": {
        "voxel_sizes": [1.0, 0.5, 0.25],
        "min_points": 20,
        "min_planarity": 0.6,
        "max_distance": 0.10,
        "cap_per_surfel": 10,
        "min_track_length": 3,
        "cap_per_landmark": 10,
    },
    "loss_scales": {"gyro": 0.1, "accel": 0.5, "doppler": 0.5, "surfel": 0.05, "reproj": 2.0},
    "solver": {"max_iterations": 100, "function_tolerance": 1e-8, "gradient_tolerance": 1e-10},
    "batches": {"estimate_imu_intrinsics": False},
    "simulation": {
        "duration": 20.0,
        "excitation": {"angular_amplitude": 0.6, "linear_amplitude": 0.6, "frequency": 0.5},
        "noise_scale": 1.0,
        "outlier_fraction": 0.2,
        "max_true_offset": 0.05,
        "readout_time": 0.03,
        "landmarks": 600,
        "room_size": 10.0,
    },
}


class ConfigError(ValueError):
    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass
class SensorSpec:
    name: str
    kind: str
    rate: float
    noise: dict[str, float]
    intrinsics: Any = None
    truth: dict[str, Any] | None = None
    options: dict[str, Any] = field(default_factory=dict)

    def to_dict(self):
        d = {"name": self.name, "kind": self.kind, "rate": self.rate, "noise": dict(self.noise)}
        if self.intrinsics is not None:
            d["intrinsics"] = self.intrinsics.to_dict()
        if self.truth is not None:
            d["truth"] = copy.deepcopy(self.truth)
        d.update(copy.deepcopy(self.options))
        return d


@dataclass
class RigConfig:
    sensors: list[SensorSpec]
    reference_imu: str
    settings: dict[str, Any]

    def __getitem__(self, key):
        return self.settings[key]

    def sensor(self, name: str) -> SensorSpec:
        for s in self.sensors:
            if s.name == name:
                return s
        raise KeyError(name)

    def of_kind(self, kind: str) -> list[SensorSpec]:
        return [s for s in self.sensors if s.kind == kind]

    @property
    def counts(self) -> dict[str, int]:
        return {k: len(self.of_kind(k)) for k in SENSOR_KINDS}

    def to_dict(self):
        out = copy.deepcopy(self.settings)
        out["reference_imu"] = self.reference_imu
        out["sensors"] = [s.to_dict() for s in self.sensors]
        return out

    def with_settings(self, **updates) -> "RigConfig":
        cfg = copy.deepcopy(self)
        _merge(cfg.settings, updates)
        return cfg


def _merge(base: dict, upd: dict):
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = copy.deepcopy(v)


def check_sensor_counts(counts: dict[str, int]) -> list[str]:
    """The rig needs at least one IMU and at least two sensors overall."""
    errors = []
    nb = counts.get("imu", 0)
    total = sum(counts.get(k, 0) for k in SENSOR_KINDS)
    if nb < 1:
        errors.append("sensor-count rule violated: at least one IMU is required (n_b >= 1)")
    if total < 2:
        errors.append(
            f"sensor-count rule violated: n_b + n_r + n_l + n_c = {total} < 2 "
            "(a calibration needs at least two sensors)"
        )
    return errors


def config_from_dict(raw: dict) -> RigConfig:
    raw = copy.deepcopy(raw)
    violations: list[str] = []
    settings = copy.deepcopy(DEFAULTS)
    sensors_raw = raw.pop("sensors", None)
    reference = raw.pop("reference_imu", None)
    _merge(settings, raw)

    sensors: list[SensorSpec] = []
    if not sensors_raw:
        violations.append("no sensors configured")
        sensors_raw = []
    seen = set()
    for i, s in enumerate(sensors_raw):
        s = dict(s)
        name = s.pop("name", None)
        kind = s.pop("kind", None)
        if not name:
            violations.append(f"sensor #{i} has no name")
            continue
        if name in seen:
            violations.append(f"duplicate sensor name {name!r}")
        seen.add(name)
        if kind not in SENSOR_KINDS:
            violations.append(f"sensor {name!r}: unknown kind {kind!r}")
            continue
        rate = float(s.pop("rate", DEFAULT_RATES[kind]))
        if rate <= 0:
            violations.append(f"sensor {name!r}: rate must be positive")
        noise = dict(DEFAULT_NOISE[kind])
        noise.update(s.pop("noise", {}) or {})
        for key, val in noise.items():
            if not float(val) > 0:
                violations.append(f"sensor {name!r}: noise sigma {key!r} must be > 0")
        intr_raw = s.pop("intrinsics", None)
        intr = None
        try:
            if kind == "imu":
                intr = ImuIntrinsics.from_dict(intr_raw)
            elif kind == "camera":
                intr = CameraIntrinsics.from_dict(intr_raw or default_camera_intrinsics())
        except (TypeError, ValueError) as exc:
            violations.append(f"sensor {name!r}: bad intrinsics ({exc})")
        truth = s.pop("truth", None)
        sensors.append(SensorSpec(name, kind, rate, {k: float(v) for k, v in noise.items()}, intr, truth, s))

    imus = [s.name for s in sensors if s.kind == "imu"]
    if reference is None:
        violations.append("missing reference IMU ('reference_imu')")
    elif reference not in imus:
        violations.append(f"reference IMU {reference!r} is not a configured IMU")
    counts = {k: sum(1 for s in sensors if s.kind == k) for k in SENSOR_KINDS}
    violations.extend(check_sensor_counts(counts))
    if settings["spline"]["dt_rot"] <= 0 or settings["spline"]["dt_scale"] <= 0:
        violations.append("spline knot spacing must be positive")
    if settings["offset_bound"] <= 0:
        violations.append("offset_bound must be positive")
    if settings["offset_bound"] > settings["spline"]["padding"] + 1e-12:
        violations.append("offset_bound must not exceed the spline padding")
    if violations:
        raise ConfigError(violations)
    return RigConfig(sensors=sensors, reference_imu=reference, settings=settings)


def load_config(path) -> RigConfig:
    raw = json.loads(Path(path).read_text())
    return config_from_dict(raw)


def default_camera_intrinsics() -> dict:
    return {
        "fx": 400.0, "fy": 400.0, "cx": 320.0, "cy": 240.0,
        "width": 640, "height": 480,
        "distortion": "brown", "coeffs": [0.0, 0.0, 0.0, 0.0, 0.0],
        "readout_time": 0.0,
    }


def make_rig(imus=2, radars=0, lidars=0, cameras=0, **settings) -> RigConfig:
    """Convenience builder for the standard M-xI rigs used in demos and tests."""
    sensors = []
    for i in range(imus):
        sensors.append({"name": f"imu{i}", "kind": "imu"})
    for i in range(radars):
        sensors.append({"name": f"radar{i}", "kind": "radar", "targets_per_scan": 30})
    for i in range(lidars):
        sensors.append({"name": f"lidar{i}", "kind": "lidar", "points_per_scan": 600})
    for i in range(cameras):
        sensors.append({"name": f"cam{i}", "kind": "camera"})
    raw = {"reference_imu": "imu0", "sensors": sensors}
    _merge(raw, settings)
    return config_from_dict(raw)


PRESETS = {
    "m-i": dict(imus=2),
    "m-ri": dict(imus=1, radars=1),
    "m-li": dict(imus=1, lidars=1),
    "m-ci": dict(imus=1, cameras=1),
    "m-rli": dict(imus=1, radars=1, lidars=1),
    "m-cri": dict(imus=1, radars=1, cameras=1),
    "m-cli": dict(imus=1, lidars=1, cameras=1),
    "m-clri": dict(imus=2, radars=1, lidars=1, cameras=1),
}


def rig_preset(name: str, **settings) -> RigConfig:
    """Standard rig by its family name (``M-I`` ... ``M-CLRI``, case and ``_``/``-`` insensitive)."""
    key = name.lower().replace("_", "-")
    if key not in PRESETS:
        raise ConfigError([f"unknown rig preset {name!r}; known: {', '.join(sorted(PRESETS))}"])
    return make_rig(**PRESETS[key], **settings)


def resolve_rig(arg: str) -> RigConfig:
    """A rig config path, or a preset name when no such file exists."""
    path = Path(arg)
    if path.exists():
        return load_config(path)
    stem = path.name[:-5] if path.name.endswith(".json") else path.name
    return rig_preset(stem)
