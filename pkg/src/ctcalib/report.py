"""Calibration report, ground-truth scoring and plot-data CSVs.

Everything in a report is stored JSON-native (floats, lists, dicts), so a
report written to disk and read back compares equal to the original.
Field names carry their units.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .lie import geodesic_deg, rot_to_euler_zyx_deg, rot_to_quat, so3_log
from .state import CalibrationState

RESIDUAL_UNITS = {"gyro": "rad/s", "accel": "m/s^2", "doppler": "m/s", "surfel": "m", "reproj": "px"}
HISTOGRAM_BINS = 41


def _native(x):
    if isinstance(x, dict):
        return {str(k): _native(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_native(v) for v in x]
    if isinstance(x, np.ndarray):
        return _native(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x


def sensor_entry(state: CalibrationState, name: str) -> dict:
    e = state.extrinsics[name]
    out = {
        "kind": state.kinds[name],
        "rotation_quat_wxyz": rot_to_quat(e.rotation).tolist(),
        "rotation_euler_zyx_deg": rot_to_euler_zyx_deg(e.rotation).tolist(),
        "translation_m": e.translation.tolist(),
        "time_offset_s": float(e.offset),
    }
    if name in state.readout:
        out["readout_time_s"] = float(state.readout[name])
        out["visual_scale"] = float(state.visual_scale.get(name, 1.0))
    if name in state.imu_intrinsics:
        out["imu_intrinsics"] = state.imu_intrinsics[name].to_dict()
    return out


def residual_statistics(families, state: CalibrationState, bins: int = HISTOGRAM_BINS) -> dict:
    """Mean, STD, RMS and a histogram of the raw residual components of each family."""
    out = {}
    for fam in families:
        r, active = fam.evaluate(state)
        v = np.asarray(r)[active].ravel()
        key = f"{fam.kind}:{fam.sensor}"
        entry = {"unit": RESIDUAL_UNITS[fam.kind], "count": int(v.size)}
        if v.size:
            std = float(np.std(v))
            half = 4.0 * std if std > 0 else 1.0
            counts, edges = np.histogram(np.clip(v, -half, half), bins=bins, range=(-half, half))
            entry.update(mean=float(np.mean(v)), std=std, rms=float(np.sqrt(np.mean(v * v))),
                         histogram={"edges": edges.tolist(), "counts": counts.tolist()})
        out[key] = entry
    return out


@dataclass
class CalibrationReport:
    reference_imu: str
    scale_mode: str
    sensors: dict = field(default_factory=dict)
    gravity_mps2: list = field(default_factory=list)
    initialization: list = field(default_factory=list)
    batches: list = field(default_factory=list)
    residual_stats: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    failure: dict | None = None
    state: dict | None = None
    wall_clock_s: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _native(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationReport":
        return cls(**d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "CalibrationReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def calibration_state(self) -> CalibrationState:
        if self.state is None:
            raise ValueError("report carries no state")
        return CalibrationState.from_dict(self.state)

    @property
    def cost_trace(self) -> list[float]:
        return [c for b in self.batches for c in b["costs"]]

    def deterministic_dict(self) -> dict:
        d = self.to_dict()
        d.pop("wall_clock_s", None)
        return d


def _snapshot_native(snap: dict) -> dict:
    return _native(snap)


def build_report(state: CalibrationState, init=None, refine=None, families=None, truth=None,
                 wall_clock: dict | None = None, failure: dict | None = None) -> CalibrationReport:
    rep = CalibrationReport(state.reference, state.scale_mode)
    rep.sensors = {n: sensor_entry(state, n) for n in state.extrinsics}
    rep.gravity_mps2 = state.gravity.tolist()
    if init is not None:
        rep.initialization = _native(init.log())
        rep.warnings += list(init.warnings)
    if refine is not None:
        for b in refine.batches:
            d = b.to_dict()
            d["snapshots"] = [_snapshot_native(s) for s in b.solve.snapshots]
            rep.batches.append(_native(d))
    if families is not None:
        rep.residual_stats = residual_statistics(families, state)
    rep.state = _native(state.to_dict())
    rep.wall_clock_s = dict(wall_clock or {})
    rep.failure = failure
    if truth is not None:
        rep.errors = score(rep, truth)
    return rep


# -- scoring -------------------------------------------------------------------------------


def world_alignment(est_rot, true_rot, samples: int = 200) -> np.ndarray:
    """Rotation Q with ``R_true(t) ~ Q R_est(t)`` (chordal mean over the common support)."""
    lo = max(est_rot.grid.support[0], true_rot.grid.support[0])
    hi = min(est_rot.grid.support[1], true_rot.grid.support[1])
    t = np.linspace(lo + 1e-6, hi - 1e-6, samples)
    M = np.sum(true_rot.evaluate(t) @ np.swapaxes(est_rot.evaluate(t), 1, 2), axis=0)
    U, _, Vt = np.linalg.svd(M)
    return U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt


def _quat_rot(q):
    from .lie import quat_to_rot

    return quat_to_rot(np.asarray(q, dtype=float))


def score(report: CalibrationReport, truth) -> dict:
    """Per-sensor errors of a report against a GroundTruthScenario.

    Rotation errors are geodesic (deg) with the signed error vector
    ``Log(R_true^T R_est)``; translation errors are Euclidean norms (m) with
    the signed difference; offsets and readout times are signed, in ms.
    """
    missing = sorted(set(report.sensors) ^ set(truth.sensors))
    if missing:
        raise ValueError(f"sensor names differ between report and ground truth: {missing}")
    out = {}
    for n, s in report.sensors.items():
        tr = truth.sensors[n]
        R = _quat_rot(s["rotation_quat_wxyz"])
        dp = np.asarray(s["translation_m"]) - tr.translation
        e = {
            "rotation_deg": float(geodesic_deg(tr.rotation, R)),
            "rotation_vec_deg": np.degrees(so3_log(tr.rotation.T @ R)).tolist(),
            "translation_m": float(np.linalg.norm(dp)),
            "translation_vec_m": dp.tolist(),
            "offset_ms": 1e3 * (s["time_offset_s"] - tr.time_offset),
        }
        if "readout_time_s" in s:
            e["readout_ms"] = 1e3 * (s["readout_time_s"] - tr.readout_time)
            e["visual_scale_rel"] = s["visual_scale"] / tr.visual_scale - 1.0
        out[n] = e
    g = np.asarray(report.gravity_mps2)
    if report.state is not None:
        from .spline import So3Spline

        Q = world_alignment(So3Spline.from_dict(report.state["rot_spline"]), truth.rot_spline)
        g = Q @ g
    cosang = g @ truth.gravity / (np.linalg.norm(g) * np.linalg.norm(truth.gravity))
    out["gravity"] = {"direction_deg": float(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))),
                      "magnitude_mps2": float(np.linalg.norm(g) - np.linalg.norm(truth.gravity))}
    return out


def batch_statistics(tables: list[dict]) -> dict:
    """Seed-batch spread of per-sensor errors.

    For vector errors the STD is taken per axis and averaged over the axes.
    Means of the absolute errors are reported alongside.
    """
    if not tables:
        raise ValueError("no error tables")
    names = sorted(set.intersection(*[set(t) for t in tables]) - {"gravity"})
    out = {}
    for n in names:
        rows = [t[n] for t in tables]
        e = {"samples": len(rows)}
        for key, vec in (("rotation", "rotation_vec_deg"), ("translation", "translation_vec_m")):
            v = np.array([r[vec] for r in rows])
            unit = "deg" if key == "rotation" else "m"
            e[f"{key}_std_{unit}"] = float(np.mean(np.std(v, axis=0, ddof=1))) if len(rows) > 1 else 0.0
            e[f"{key}_mean_abs_{unit}"] = float(np.mean([r[f"{key}_{unit}"] for r in rows]))
        for key in ("offset_ms", "readout_ms"):
            if key in rows[0]:
                v = np.array([r[key] for r in rows])
                e[f"{key[:-3]}_std_ms"] = float(np.std(v, ddof=1)) if len(rows) > 1 else 0.0
                e[f"{key[:-3]}_mean_abs_ms"] = float(np.mean(np.abs(v)))
        out[n] = e
    return out


# -- plot data ------------------------------------------------------------------------------


def convergence_rows(report: CalibrationReport) -> list[dict]:
    """One row per accepted iteration: cost and each sensor's distance to its final value."""
    final = report.sensors
    rows = []
    k = 0
    for b in report.batches:
        snaps = b.get("snapshots") or []
        for i, c in enumerate(b["costs"]):
            row = {"step": k, "batch": b["batch"], "iteration": i, "cost": c}
            if i < len(snaps):
                for n, s in snaps[i].items():
                    if n not in final or not isinstance(s, dict):
                        continue
                    Rf = _quat_rot(final[n]["rotation_quat_wxyz"])
                    row[f"{n}_rotation_deg"] = float(geodesic_deg(np.asarray(s["rotation"]), Rf))
                    row[f"{n}_translation_m"] = float(np.linalg.norm(np.asarray(s["translation"])
                                                                     - final[n]["translation_m"]))
                    row[f"{n}_offset_ms"] = 1e3 * abs(s["offset"] - final[n]["time_offset_s"])
                    if "readout" in s and "readout_time_s" in final[n]:
                        row[f"{n}_readout_ms"] = 1e3 * abs(s["readout"] - final[n]["readout_time_s"])
            rows.append(row)
            k += 1
    return rows


def _write_csv(path: Path, rows: list[dict]):
    keys: list[str] = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def histogram_rows(report: CalibrationReport, kind: str) -> list[dict]:
    rows = []
    for key, st in report.residual_stats.items():
        if not key.startswith(kind + ":") or "histogram" not in st:
            continue
        h = st["histogram"]
        for lo, hi, c in zip(h["edges"][:-1], h["edges"][1:], h["counts"]):
            rows.append({"family": key, "unit": st["unit"], "bin_low": lo, "bin_high": hi, "count": c})
    return rows


def write_plot_data(report: CalibrationReport, directory) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for fname, rows in (("convergence.csv", convergence_rows(report)),
                        ("doppler_histogram.csv", histogram_rows(report, "doppler")),
                        ("reprojection_histogram.csv", histogram_rows(report, "reproj"))):
        if rows:
            _write_csv(d / fname, rows)
            written.append(d / fname)
    return written
