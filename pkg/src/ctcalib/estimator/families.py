"""Turn measurement streams and associations into residual families."""

from __future__ import annotations

import numpy as np

from ..assoc import ReprojectionPairs, SurfelAssociation, anchor_inverse_depths, build_reprojection_pairs
from ..config import RigConfig
from ..data import MeasurementSet
from ..state import CalibrationState
from .residuals import AccelResidual, DopplerResidual, GyroResidual, ReprojResidual, SurfelResidual


def _loss(config: RigConfig, kind: str, robust: bool):
    return config["loss_scales"][kind] if robust else None


def inertial_families(state, ms: MeasurementSet, config: RigConfig, robust=True, accel=True, stride: int = 1):
    fams = []
    for name, s in ms.imu.items():
        n = config.sensor(name).noise
        sl = slice(None, None, max(stride, 1))
        fams.append(GyroResidual(name, s.t[sl], s.w[sl], n["gyro"], _loss(config, "gyro", robust)))
        if accel and state.scale_spline is not None:
            fams.append(AccelResidual(name, s.t[sl], s.a[sl], n["accel"], _loss(config, "accel", robust)))
    return fams


def doppler_families(state, ms: MeasurementSet, config: RigConfig, robust=True):
    fams = []
    for name, s in ms.radar.items():
        n = config.sensor(name).noise
        fams.append(DopplerResidual(name, s.t, s.p, s.v, n["doppler"], _loss(config, "doppler", robust)))
    return fams


def surfel_family(name, assoc: SurfelAssociation, config: RigConfig, robust=True):
    n = config.sensor(name).noise
    return SurfelResidual(name, assoc.t, assoc.p, assoc.normal, assoc.d, n["range"],
                          _loss(config, "surfel", robust))


def reprojection_family(state: CalibrationState, name: str, ms: MeasurementSet, pairs: ReprojectionPairs,
                        config: RigConfig, robust=True):
    cs = ms.camera[name]
    intr = state.cam_intrinsics[name]
    n = config.sensor(name).noise
    a, o = pairs.anchor, pairs.other
    return ReprojResidual(name, intr, cs.t[a], cs.uv[a], cs.t[o], cs.uv[o], pairs.landmark,
                          n["pixel"], _loss(config, "reproj", robust))


def camera_pairs_and_depths(state: CalibrationState, name: str, ms: MeasurementSet, landmarks_world: dict,
                            config: RigConfig):
    """Reprojection pairs for one camera plus the inverse depths of their landmarks.

    Landmarks missing from ``landmarks_world`` or behind their anchor
    camera are dropped; returns ``(pairs, inv_depth, skipped)``.
    """
    cs = ms.camera[name]
    a = config["association"]
    known = np.array([int(l) in landmarks_world for l in cs.lm], dtype=bool)
    idx = np.flatnonzero(known)
    pairs = build_reprojection_pairs(cs.t[idx], cs.lm[idx], int(a["min_track_length"]), int(a["cap_per_landmark"]))
    pairs = ReprojectionPairs(idx[pairs.anchor], idx[pairs.other], pairs.landmark, pairs.landmark_ids)
    if len(pairs.landmark_ids) == 0:
        return pairs, np.zeros(0), 0
    first = np.zeros(len(pairs.landmark_ids), dtype=np.int64)
    first[pairs.landmark] = pairs.anchor
    pts = np.array([landmarks_world[int(i)] for i in pairs.landmark_ids])
    intr = state.cam_intrinsics[name]
    lam = anchor_inverse_depths(state, name, cs.t[first], cs.uv[first, 1], float(intr.height), pts)
    good = np.isfinite(lam)
    skipped = int(np.sum(~good))
    if skipped:
        remap = np.full(len(good), -1, dtype=np.int64)
        remap[good] = np.arange(int(good.sum()))
        keep = good[pairs.landmark]
        pairs = ReprojectionPairs(pairs.anchor[keep], pairs.other[keep], remap[pairs.landmark[keep]],
                                  pairs.landmark_ids[good])
        lam = lam[good]
    return pairs, lam, skipped
