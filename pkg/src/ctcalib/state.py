"""The calibration state: splines, gravity and per-sensor parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lie import quat_to_rot, rot_to_euler_zyx_deg, rot_to_quat
from .sensors import CameraIntrinsics, ImuIntrinsics
from .spline import R3Spline, So3Spline


@dataclass
class Extrinsic:
    """Sensor frame relative to the reference IMU, plus its clock offset."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    offset: float = 0.0

    def copy(self) -> "Extrinsic":
        return Extrinsic(self.rotation.copy(), self.translation.copy(), float(self.offset))

    def to_dict(self):
        return {
            "rotation_quat_wxyz": rot_to_quat(self.rotation).tolist(),
            "rotation_euler_zyx_deg": rot_to_euler_zyx_deg(self.rotation).tolist(),
            "translation_m": self.translation.tolist(),
            "time_offset_s": float(self.offset),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(quat_to_rot(np.asarray(d["rotation_quat_wxyz"])),
                   np.asarray(d["translation_m"], dtype=float), float(d["time_offset_s"]))


@dataclass
class CalibrationState:
    reference: str
    kinds: dict[str, str]
    rot_spline: So3Spline
    scale_spline: R3Spline | None = None
    scale_mode: str = "acceleration"
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    extrinsics: dict[str, Extrinsic] = field(default_factory=dict)
    readout: dict[str, float] = field(default_factory=dict)
    visual_scale: dict[str, float] = field(default_factory=dict)
    inv_depth: dict[str, np.ndarray] = field(default_factory=dict)
    imu_intrinsics: dict[str, ImuIntrinsics] = field(default_factory=dict)
    cam_intrinsics: dict[str, CameraIntrinsics] = field(default_factory=dict)

    def __post_init__(self):
        self._cache: dict = {}

    @property
    def gravity_magnitude(self) -> float:
        return float(np.linalg.norm(self.gravity))

    def rot_deltas(self) -> np.ndarray:
        d = self._cache.get("rot_deltas")
        if d is None:
            d = self._cache["rot_deltas"] = self.rot_spline.knot_deltas()
        return d

    def sensors_of(self, kind: str) -> list[str]:
        return [n for n, k in self.kinds.items() if k == kind]

    def copy(self) -> "CalibrationState":
        out = CalibrationState(
            reference=self.reference,
            kinds=dict(self.kinds),
            rot_spline=self.rot_spline.copy(),
            scale_spline=self.scale_spline.copy() if self.scale_spline is not None else None,
            scale_mode=self.scale_mode,
            gravity=self.gravity.copy(),
            extrinsics={k: v.copy() for k, v in self.extrinsics.items()},
            readout=dict(self.readout),
            visual_scale=dict(self.visual_scale),
            inv_depth={k: v.copy() for k, v in self.inv_depth.items()},
            imu_intrinsics={k: v.copy() for k, v in self.imu_intrinsics.items()},
            cam_intrinsics=dict(self.cam_intrinsics),
        )
        return out

    def check_finite(self) -> list[str]:
        bad = []
        if not np.all(np.isfinite(self.rot_spline.knots)):
            bad.append("rotation knots")
        if self.scale_spline is None or not np.all(np.isfinite(self.scale_spline.knots)):
            bad.append("scale knots")
        if not np.all(np.isfinite(self.gravity)):
            bad.append("gravity")
        for n, e in self.extrinsics.items():
            if not (np.all(np.isfinite(e.rotation)) and np.all(np.isfinite(e.translation)) and np.isfinite(e.offset)):
                bad.append(f"extrinsics of {n}")
        for n, v in self.readout.items():
            if not np.isfinite(v):
                bad.append(f"readout of {n}")
        for n, v in self.visual_scale.items():
            if not np.isfinite(v):
                bad.append(f"visual scale of {n}")
        return bad

    def to_dict(self):
        return {
            "reference_imu": self.reference,
            "kinds": dict(self.kinds),
            "scale_mode": self.scale_mode,
            "gravity_mps2": self.gravity.tolist(),
            "extrinsics": {k: v.to_dict() for k, v in self.extrinsics.items()},
            "readout_time_s": dict(self.readout),
            "visual_scale": dict(self.visual_scale),
            "imu_intrinsics": {k: v.to_dict() for k, v in self.imu_intrinsics.items()},
            "rot_spline": self.rot_spline.to_dict(),
            "scale_spline": self.scale_spline.to_dict() if self.scale_spline is not None else None,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            reference=d["reference_imu"],
            kinds=dict(d["kinds"]),
            rot_spline=So3Spline.from_dict(d["rot_spline"]),
            scale_spline=R3Spline.from_dict(d["scale_spline"]) if d.get("scale_spline") else None,
            scale_mode=d["scale_mode"],
            gravity=np.asarray(d["gravity_mps2"], dtype=float),
            extrinsics={k: Extrinsic.from_dict(v) for k, v in d["extrinsics"].items()},
            readout={k: float(v) for k, v in d.get("readout_time_s", {}).items()},
            visual_scale={k: float(v) for k, v in d.get("visual_scale", {}).items()},
            imu_intrinsics={k: ImuIntrinsics.from_dict(v) for k, v in d.get("imu_intrinsics", {}).items()},
        )


def snapshot(state: CalibrationState) -> dict:
    """Compact per-sensor parameter summary used for convergence traces."""
    out = {"gravity": state.gravity.copy()}
    for n, e in state.extrinsics.items():
        out[n] = {"rotation": e.rotation.copy(), "translation": e.translation.copy(), "offset": e.offset}
        if n in state.readout:
            out[n]["readout"] = state.readout[n]
        if n in state.visual_scale:
            out[n]["visual_scale"] = state.visual_scale[n]
    return out
