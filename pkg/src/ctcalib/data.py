"""Measurement streams and their JSONL serialization.

One file per sensor stream, one JSON object per line:

* imu ``{"t", "a": [3], "w": [3]}``
* radar ``{"t", "p": [3], "v"}`` (targets sharing ``t`` form one scan)
* lidar ``{"t", "p": [3], "scan"}``
* camera ``{"t", "lm", "uv": [2]}``
* odometry ``{"t", "q": [4], "p": [3]}``; camera odometry also ships
  ``<name>.landmarks.jsonl`` with ``{"lm", "p": [3]}`` up-to-scale points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lie import quat_to_rot, rot_to_quat


class DataError(ValueError):
    pass


@dataclass
class ImuStream:
    t: np.ndarray
    a: np.ndarray
    w: np.ndarray

    def __len__(self):
        return len(self.t)

    def slice(self, mask) -> "ImuStream":
        return ImuStream(self.t[mask], self.a[mask], self.w[mask])


@dataclass
class RadarStream:
    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    outlier: np.ndarray | None = None  # ground-truth labels, simulation only

    def __len__(self):
        return len(self.t)

    def scans(self):
        """Yield index arrays of targets sharing a stamp."""
        if len(self.t) == 0:
            return
        cuts = np.flatnonzero(np.diff(self.t) != 0.0) + 1
        yield from np.split(np.arange(len(self.t)), cuts)


@dataclass
class LidarStream:
    t: np.ndarray
    p: np.ndarray
    scan: np.ndarray
    plane: np.ndarray | None = None  # ground-truth plane index, simulation only

    def __len__(self):
        return len(self.t)


@dataclass
class CameraStream:
    t: np.ndarray
    lm: np.ndarray
    uv: np.ndarray

    def __len__(self):
        return len(self.t)


@dataclass
class OdometryStream:
    t: np.ndarray
    R: np.ndarray
    p: np.ndarray
    landmarks: dict[int, np.ndarray] | None = None

    def __len__(self):
        return len(self.t)


@dataclass
class MeasurementSet:
    imu: dict[str, ImuStream] = field(default_factory=dict)
    radar: dict[str, RadarStream] = field(default_factory=dict)
    lidar: dict[str, LidarStream] = field(default_factory=dict)
    camera: dict[str, CameraStream] = field(default_factory=dict)
    odometry: dict[str, OdometryStream] = field(default_factory=dict)

    def counts(self) -> dict[str, int]:
        out = {}
        for group in ("imu", "radar", "lidar", "camera"):
            for name, s in getattr(self, group).items():
                out[name] = len(s)
        for name, s in self.odometry.items():
            out[f"{name}.odometry"] = len(s)
        return out


def _write_jsonl(path: Path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":")))
            fh.write("\n")


def save_measurements(ms: MeasurementSet, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, s in ms.imu.items():
        _write_jsonl(d / f"{name}.jsonl", (
            {"t": float(t), "a": a.tolist(), "w": w.tolist()} for t, a, w in zip(s.t, s.a, s.w)))
    for name, s in ms.radar.items():
        _write_jsonl(d / f"{name}.jsonl", (
            {"t": float(t), "p": p.tolist(), "v": float(v)} for t, p, v in zip(s.t, s.p, s.v)))
    for name, s in ms.lidar.items():
        _write_jsonl(d / f"{name}.jsonl", (
            {"t": float(t), "p": p.tolist(), "scan": int(k)} for t, p, k in zip(s.t, s.p, s.scan)))
    for name, s in ms.camera.items():
        _write_jsonl(d / f"{name}.jsonl", (
            {"t": float(t), "lm": int(l), "uv": uv.tolist()} for t, l, uv in zip(s.t, s.lm, s.uv)))
    for name, s in ms.odometry.items():
        q = rot_to_quat(s.R) if len(s) else np.zeros((0, 4))
        _write_jsonl(d / f"{name}.odometry.jsonl", (
            {"t": float(t), "q": qq.tolist(), "p": p.tolist()} for t, qq, p in zip(s.t, q, s.p)))
        if s.landmarks is not None:
            _write_jsonl(d / f"{name}.landmarks.jsonl", (
                {"lm": int(k), "p": np.asarray(v).tolist()} for k, v in sorted(s.landmarks.items())))


_SCHEMAS = {
    "imu": {"t": 1, "a": 3, "w": 3},
    "radar": {"t": 1, "p": 3, "v": 1},
    "lidar": {"t": 1, "p": 3, "scan": 1},
    "camera": {"t": 1, "lm": 1, "uv": 2},
    "odometry": {"t": 1, "q": 4, "p": 3},
    "landmarks": {"lm": 1, "p": 3},
}


def read_jsonl(path, kind: str) -> dict[str, np.ndarray]:
    """Parse one stream file, validating each line against the schema of ``kind``."""
    schema = _SCHEMAS[kind]
    cols: dict[str, list] = {k: [] for k in schema}
    path = Path(path)
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path.name}: line {lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path.name}: line {lineno}: expected an object")
            for key, size in schema.items():
                if key not in obj:
                    raise DataError(f"{path.name}: line {lineno}: missing field {key!r}")
                val = obj[key]
                arr = np.asarray(val, dtype=float) if not isinstance(val, bool) else None
                if arr is None or arr.size != size or (size > 1 and arr.ndim != 1) or not np.all(np.isfinite(arr)):
                    raise DataError(f"{path.name}: line {lineno}: field {key!r} must be {size} finite number(s)")
                cols[key].append(arr.reshape(size) if size > 1 else float(arr))
    out = {}
    for key, size in schema.items():
        a = np.asarray(cols[key], dtype=float)
        out[key] = a.reshape(-1, size) if size > 1 else a.reshape(-1)
    return out


def _check_monotone(name, t, strict=False):
    d = np.diff(t)
    bad = np.flatnonzero(d <= 0 if strict else d < 0)
    if bad.size:
        lines = (bad + 2).tolist()[:10]
        raise DataError(f"{name}: non-monotone stamps at lines {lines}")


def load_measurements(directory, config) -> MeasurementSet:
    """Load every configured sensor's stream from ``directory``."""
    d = Path(directory)
    ms = MeasurementSet()
    missing = []
    for spec in config.sensors:
        path = d / f"{spec.name}.jsonl"
        if not path.exists():
            missing.append(f"{spec.name}: file {path.name} not found")
            continue
        cols = read_jsonl(path, spec.kind)
        if cols["t"].size == 0:
            missing.append(f"{spec.name}: no measurements in {path.name}")
            continue
        # stamps must already be sorted; ties allowed for radar scans and camera frames
        _check_monotone(path.name, cols["t"], strict=spec.kind in ("imu",))
        if spec.kind == "imu":
            ms.imu[spec.name] = ImuStream(cols["t"], cols["a"], cols["w"])
        elif spec.kind == "radar":
            ms.radar[spec.name] = RadarStream(cols["t"], cols["p"], cols["v"])
        elif spec.kind == "lidar":
            ms.lidar[spec.name] = LidarStream(cols["t"], cols["p"], cols["scan"].astype(np.int64))
        else:
            ms.camera[spec.name] = CameraStream(cols["t"], cols["lm"].astype(np.int64), cols["uv"])
        if spec.kind in ("lidar", "camera"):
            opath = d / f"{spec.name}.odometry.jsonl"
            if not opath.exists():
                missing.append(f"{spec.name}: odometry file {opath.name} not found")
                continue
            oc = read_jsonl(opath, "odometry")
            _check_monotone(opath.name, oc["t"], strict=True)
            lms = None
            lpath = d / f"{spec.name}.landmarks.jsonl"
            if spec.kind == "camera" and lpath.exists():
                lc = read_jsonl(lpath, "landmarks")
                lms = {int(k): p for k, p in zip(lc["lm"], lc["p"])}
            ms.odometry[spec.name] = OdometryStream(oc["t"], quat_to_rot(oc["q"]).reshape(-1, 3, 3), oc["p"], lms)
    if missing:
        raise DataError("missing data: " + "; ".join(missing))
    return ms
