"""Data association: point-to-surfel pairs and visual reprojection pairs.

The surfel map is a multi-level voxel hash. Every voxel keeps the count,
mean and covariance of the world points falling in it; a voxel whose
covariance is flat enough becomes a surfel (plane normal + offset).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kinematics import evaluate_motion, rotate, rotate_t, sensor_pose
from .state import CalibrationState

_BITS = 21
_BIAS = 1 << (_BITS - 1)


def voxel_keys(points, size: float) -> np.ndarray:
    """Pack integer voxel coordinates into one int64 key per point."""
    ijk = np.floor(np.asarray(points, dtype=float) / size).astype(np.int64) + _BIAS
    if np.any((ijk < 0) | (ijk >= (1 << _BITS))):
        raise ValueError("point outside the representable voxel range")
    return (ijk[:, 0] << (2 * _BITS)) | (ijk[:, 1] << _BITS) | ijk[:, 2]


@dataclass
class SurfelLevel:
    size: float
    keys: np.ndarray  # sorted
    count: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    planarity: np.ndarray
    normal: np.ndarray
    d: np.ndarray


@dataclass
class SurfelMap:
    levels: list[SurfelLevel] = field(default_factory=list)
    min_points: int = 20

    @property
    def n_surfels(self) -> int:
        return int(sum(np.sum(lv.count >= self.min_points) for lv in self.levels))


def _voxel_stats(points, size):
    keys = voxel_keys(points, size)
    order = np.argsort(keys, kind="stable")
    k_sorted = keys[order]
    ukeys, start, count = np.unique(k_sorted, return_index=True, return_counts=True)
    p = points[order]
    # shift by the voxel corner before accumulating, which keeps the moments well conditioned
    corner = np.floor(p / size) * size
    q = p - corner
    s1 = np.add.reduceat(q, start, axis=0)
    s2 = np.add.reduceat(q[:, :, None] * q[:, None, :], start, axis=0)
    n = count[:, None].astype(float)
    mean_local = s1 / n
    cov = s2 / n[:, :, None] - mean_local[:, :, None] * mean_local[:, None, :]
    mean = mean_local + corner[start]
    return ukeys, count, mean, cov


def build_surfel_map(points, voxel_sizes=(1.0, 0.5, 0.25), min_points: int = 20) -> SurfelMap:
    """Accumulate world points into every voxel level and fit a plane per voxel."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    out = SurfelMap(min_points=max(int(min_points), 3))
    for size in voxel_sizes:
        if len(points) == 0:
            z = np.zeros(0)
            out.levels.append(SurfelLevel(size, z.astype(np.int64), z.astype(np.int64), np.zeros((0, 3)),
                                          np.zeros((0, 3, 3)), z, np.zeros((0, 3)), z))
            continue
        keys, count, mean, cov = _voxel_stats(points, float(size))
        w, V = np.linalg.eigh(cov)
        w = np.maximum(w, 0.0)
        l1, l2, l3 = w[:, 2], w[:, 1], w[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            planarity = np.where(l1 > 0, (l2 - l3) / l1, 0.0)
        planarity = np.clip(planarity, 0.0, 1.0)
        normal = V[:, :, 0]
        d = -np.sum(normal * mean, axis=1)
        flip = d < 0
        normal[flip] *= -1.0
        d[flip] *= -1.0
        out.levels.append(SurfelLevel(float(size), keys, count, mean, cov, planarity, normal, d))
    return out


@dataclass
class SurfelMatches:
    index: np.ndarray  # point index into the query array
    surfel: np.ndarray  # dense id ordered by (level, key)
    level: np.ndarray
    key: np.ndarray
    normal: np.ndarray
    d: np.ndarray
    distance: np.ndarray

    def __len__(self):
        return len(self.index)


def associate(smap: SurfelMap, points, min_planarity: float = 0.6, max_distance: float = 0.10) -> SurfelMatches:
    """Pick, for every point, the most planar surfel containing it that it lies close to.

    Ties go to the smaller voxel, then the lower key. Points without a
    qualifying surfel are left out.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(points)
    best_pl = np.full(n, -1.0)
    best_level = np.full(n, -1, dtype=np.int64)
    best_slot = np.full(n, -1, dtype=np.int64)
    best_key = np.zeros(n, dtype=np.int64)
    best_size = np.full(n, np.inf)
    for li, lv in enumerate(smap.levels):
        if len(lv.keys) == 0 or n == 0:
            continue
        keys = voxel_keys(points, lv.size)
        slot = np.clip(np.searchsorted(lv.keys, keys), 0, len(lv.keys) - 1)
        ok = lv.keys[slot] == keys
        ok &= lv.count[slot] >= smap.min_points
        ok &= lv.planarity[slot] >= min_planarity
        dist = np.abs(np.sum(lv.normal[slot] * points, axis=1) + lv.d[slot])
        ok &= dist <= max_distance
        pl = lv.planarity[slot]
        smaller = (lv.size < best_size) | ((lv.size == best_size) & (keys < best_key))
        better = ok & ((pl > best_pl) | ((pl == best_pl) & smaller))
        best_pl = np.where(better, pl, best_pl)
        best_level = np.where(better, li, best_level)
        best_slot = np.where(better, slot, best_slot)
        best_key = np.where(better, keys, best_key)
        best_size = np.where(better, lv.size, best_size)
    idx = np.flatnonzero(best_level >= 0)
    normal = np.zeros((len(idx), 3))
    d = np.zeros(len(idx))
    for li, lv in enumerate(smap.levels):
        m = best_level[idx] == li
        normal[m] = lv.normal[best_slot[idx[m]]]
        d[m] = lv.d[best_slot[idx[m]]]
    dist = np.sum(normal * points[idx], axis=1) + d
    # dense surfel id: ordered by (level, slot)
    offsets = np.cumsum([0] + [len(lv.keys) for lv in smap.levels])
    surfel = offsets[best_level[idx]] + best_slot[idx]
    return SurfelMatches(idx, surfel, best_level[idx], best_key[idx], normal, d, dist)


def downsample_correspondences(surfel_ids, stamps, cap: int) -> np.ndarray:
    """Indices keeping at most ``cap`` points per surfel, evenly strided in time."""
    if cap < 1:
        raise ValueError("cap must be at least 1")
    surfel_ids = np.asarray(surfel_ids)
    stamps = np.asarray(stamps, dtype=float)
    order = np.lexsort((stamps, surfel_ids))
    sid = surfel_ids[order]
    cuts = np.flatnonzero(np.diff(sid) != 0) + 1
    keep = []
    for grp in np.split(order, cuts):
        if len(grp) <= cap:
            keep.append(grp)
        else:
            pick = np.round(np.linspace(0, len(grp) - 1, cap)).astype(np.int64)
            keep.append(grp[pick])
    return np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.int64)


def lidar_to_world(state: CalibrationState, sensor: str, t, p):
    """World coordinates of LiDAR points under the current state; also returns the validity mask."""
    e = state.extrinsics[sensor]
    m = evaluate_motion(state.rot_spline, state.scale_spline, state.scale_mode, np.asarray(t) + e.offset, 0,
                        ("p",), deltas=state.rot_deltas())
    R_w, p_w = sensor_pose(m, e.rotation, e.translation)
    return rotate(R_w, p) + p_w, m.valid


@dataclass
class SurfelAssociation:
    t: np.ndarray
    p: np.ndarray
    normal: np.ndarray
    d: np.ndarray
    surfel: np.ndarray
    n_surfels: int
    rms: float  # over every matched point, before the per-surfel cap
    rms_used: float = float("nan")  # over the kept pairs only
    matched: int = 0


def associate_lidar(state: CalibrationState, sensor: str, t, p, settings: dict,
                    map_stride: int = 1) -> SurfelAssociation:
    """Build the surfel map from the sensor's points and pair them with surfels."""
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    pw, valid = lidar_to_world(state, sensor, t, p)
    t, p, pw = t[valid], p[valid], pw[valid]
    smap = build_surfel_map(pw[::max(map_stride, 1)], settings["voxel_sizes"], settings["min_points"])
    m = associate(smap, pw, settings["min_planarity"], settings["max_distance"])
    keep = downsample_correspondences(m.surfel, t[m.index], int(settings["cap_per_surfel"]))
    idx = m.index[keep]
    rms = float(np.sqrt(np.mean(m.distance ** 2))) if len(m) else float("nan")
    rms_used = float(np.sqrt(np.mean(m.distance[keep] ** 2))) if len(keep) else float("nan")
    return SurfelAssociation(t[idx], p[idx], m.normal[keep], m.d[keep], m.surfel[keep],
                             int(len(np.unique(m.surfel[keep]))), rms, rms_used, len(m))


@dataclass
class ReprojectionPairs:
    anchor: np.ndarray  # observation index of the anchor
    other: np.ndarray  # observation index of the later view
    landmark: np.ndarray  # compact landmark index (into ``landmark_ids``)
    landmark_ids: np.ndarray

    def __len__(self):
        return len(self.anchor)


def build_reprojection_pairs(t, lm, min_track_length: int = 3, cap_per_landmark: int = 10) -> ReprojectionPairs:
    """Anchor every sufficiently long track at its earliest view and pair it with later views."""
    t = np.asarray(t, dtype=float)
    lm = np.asarray(lm, dtype=np.int64)
    order = np.lexsort((t, lm))
    lm_s = lm[order]
    cuts = np.flatnonzero(np.diff(lm_s) != 0) + 1
    anchors, others, lms, ids = [], [], [], []
    for grp in np.split(order, cuts) if len(order) else []:
        if len(grp) < max(min_track_length, 2):
            continue
        rest = grp[1:]
        if len(rest) > cap_per_landmark:
            rest = rest[np.round(np.linspace(0, len(rest) - 1, cap_per_landmark)).astype(np.int64)]
        anchors.append(np.full(len(rest), grp[0]))
        others.append(rest)
        lms.append(np.full(len(rest), len(ids)))
        ids.append(int(lm[grp[0]]))
    if not ids:
        z = np.zeros(0, dtype=np.int64)
        return ReprojectionPairs(z, z, z, z)
    return ReprojectionPairs(np.concatenate(anchors), np.concatenate(others), np.concatenate(lms),
                             np.asarray(ids, dtype=np.int64))


def anchor_inverse_depths(state: CalibrationState, sensor: str, t_anchor, row_anchor, height: float,
                          points_world) -> np.ndarray:
    """Inverse depth of each world point in its anchor camera frame.

    The estimator lifts a pixel as ``ray * scale / inverse_depth``, so the
    stored value is ``scale / metric_depth``. Non-positive depths come back
    as NaN.
    """
    e = state.extrinsics[sensor]
    ro = state.readout.get(sensor, 0.0)
    tq = np.asarray(t_anchor) + e.offset + (np.asarray(row_anchor) / height - 0.5) * ro
    m = evaluate_motion(state.rot_spline, state.scale_spline, state.scale_mode, tq, 0, ("p",),
                        deltas=state.rot_deltas())
    R_c, p_c = sensor_pose(m, e.rotation, e.translation)
    z = rotate_t(R_c, np.asarray(points_world) - p_c)[:, 2]
    beta = state.visual_scale.get(sensor, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where((z > 1e-6) & m.valid, beta / z, np.nan)
    return lam
