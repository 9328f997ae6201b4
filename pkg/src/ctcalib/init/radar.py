"""Radar ego-velocity from a single scan by RANSAC over three-target solves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import RadarStream


class DegenerateScanError(ValueError):
    pass


def _design(p):
    # doppler = -dir . v, so each target contributes the row -dir
    return -np.asarray(p, dtype=float) / np.linalg.norm(p, axis=1, keepdims=True)


def _well_posed(A, tol=1e-6):
    s = np.linalg.svd(A, compute_uv=False)
    return s.size >= 3 and s[-1] > tol * s[0]


def estimate_radar_ego_velocity(p, v, settings: dict, rng: np.random.Generator | None = None):
    """Velocity of the radar (in its own frame) and the inlier mask of one scan.

    Raises DegenerateScanError when the scan cannot determine a velocity.
    """
    p = np.asarray(p, dtype=float).reshape(-1, 3)
    v = np.asarray(v, dtype=float)
    n = len(v)
    if n < 3:
        raise DegenerateScanError("fewer than three targets")
    A = _design(p)
    if not _well_posed(A):
        raise DegenerateScanError("target directions are coplanar or collinear")
    rng = rng if rng is not None else np.random.default_rng(0)
    thr = float(settings["threshold"])
    min_inl = max(int(settings["min_inliers"]), 3)
    best = None
    for _ in range(int(settings["iterations"])):
        pick = rng.choice(n, 3, replace=False)
        M = A[pick]
        if abs(np.linalg.det(M)) < 1e-6:
            continue
        x = np.linalg.solve(M, v[pick])
        inl = np.abs(A @ x - v) < thr
        score = (int(inl.sum()), -float(np.sum(np.minimum((A @ x - v) ** 2, thr * thr))))
        if best is None or score > best[0]:
            best = (score, inl)
    if best is None:
        raise DegenerateScanError("no non-degenerate minimal sample")
    inl = best[1]
    for _ in range(3):
        if inl.sum() < min_inl or not _well_posed(A[inl]):
            raise DegenerateScanError("consensus set too small or degenerate")
        x = np.linalg.lstsq(A[inl], v[inl], rcond=None)[0]
        new = np.abs(A @ x - v) < thr
        if np.array_equal(new, inl):
            break
        inl = new
    return x, inl


@dataclass
class EgoVelocities:
    t: np.ndarray  # scan stamps (sensor clock)
    v: np.ndarray  # (n, 3) radar-frame velocities
    inlier: np.ndarray  # per-target mask over the whole stream
    rejected: int


def radar_ego_velocities(stream: RadarStream, settings: dict, seed: int = 0) -> EgoVelocities:
    """Run the per-scan estimator over a stream; degenerate scans are dropped and counted."""
    rng = np.random.default_rng(seed)
    ts, vs = [], []
    inlier = np.zeros(len(stream), dtype=bool)
    rejected = 0
    for idx in stream.scans():
        try:
            x, inl = estimate_radar_ego_velocity(stream.p[idx], stream.v[idx], settings, rng)
        except DegenerateScanError:
            rejected += 1
            continue
        ts.append(stream.t[idx[0]])
        vs.append(x)
        inlier[idx] = inl
    return EgoVelocities(np.asarray(ts), np.asarray(vs).reshape(-1, 3), inlier, rejected)
