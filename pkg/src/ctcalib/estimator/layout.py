"""Parameter layout: maps optimized state blocks to columns and retracts steps.

Segments are named ``rot_knots``, ``scale_knots``, ``gravity``,
``rot:<s>``, ``pos:<s>``, ``offset:<s>``, ``readout:<c>``, ``vscale:<c>``,
``invdepth:<c>`` and ``intr:<imu>``. Rotations move by a right-multiplied
Exp, gravity turns on its sphere, offsets are box-clipped.
"""

from __future__ import annotations

import fnmatch

import numpy as np

from ..lie import so3_exp
from ..sensors import ImuIntrinsics
from ..state import CalibrationState

# upper-triangular entries of the accelerometer map that are estimated
_UPPER = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
INTRINSIC_SIZE = len(_UPPER) + 6


def segment_group(name: str, kinds: dict[str, str]) -> str:
    """Coarse group used by batch schedules to freeze related segments together."""
    if name in ("rot_knots", "scale_knots", "gravity"):
        return name
    head, sensor = name.split(":", 1)
    if head in ("rot", "pos", "offset"):
        return f"{kinds[sensor]}_extrinsics"
    return {"readout": "readout", "vscale": "visual_scale", "invdepth": "inv_depth", "intr": "imu_intrinsics"}[head]


def all_segments(state: CalibrationState) -> list[tuple[str, int]]:
    segs = [("rot_knots", 0)]
    if state.scale_spline is not None:
        segs.append(("scale_knots", 0))
    segs.append(("gravity", 2))
    for s in state.extrinsics:
        if s == state.reference:
            continue
        segs += [(f"rot:{s}", 3), (f"pos:{s}", 3), (f"offset:{s}", 1)]
    for c in state.readout:
        segs += [(f"readout:{c}", 1), (f"vscale:{c}", 1)]
        n = len(state.inv_depth.get(c, ()))
        if n:
            segs.append((f"invdepth:{c}", n))
    for i in state.imu_intrinsics:
        segs.append((f"intr:{i}", INTRINSIC_SIZE))
    return segs


def is_frozen(name: str, frozen, kinds) -> bool:
    group = segment_group(name, kinds)
    return any(fnmatch.fnmatchcase(name, pat) or fnmatch.fnmatchcase(group, pat) for pat in frozen)


def sphere_basis(g: np.ndarray) -> np.ndarray:
    """Two unit vectors orthogonal to ``g`` (deterministic in ``g``)."""
    n = g / np.linalg.norm(g)
    e = np.eye(3)[int(np.argmin(np.abs(n)))]
    b1 = e - (e @ n) * n
    b1 /= np.linalg.norm(b1)
    return np.stack([b1, np.cross(n, b1)])


class Layout:
    def __init__(self, state: CalibrationState, segments: list[tuple[str, int]],
                 rot_used: np.ndarray, scale_used: np.ndarray | None, offset_bound: float = 0.1,
                 pinned_rot: np.ndarray | None = None, pinned_scale: np.ndarray | None = None):
        self.offset_bound = float(offset_bound)
        self.segments: dict[str, tuple[int, int]] = {}
        col = 0
        self.rot_cols = np.full(state.rot_spline.grid.count, -1, dtype=np.int64)
        self.scale_cols = np.full(state.scale_spline.grid.count if state.scale_spline else 0, -1, dtype=np.int64)
        for name, size in segments:
            if name == "rot_knots":
                used = np.asarray(rot_used, dtype=bool).copy()
                if pinned_rot is not None:
                    used[pinned_rot] = False
                idx = np.flatnonzero(used)
                self.rot_cols[idx] = col + 3 * np.arange(len(idx))
                size = 3 * len(idx)
            elif name == "scale_knots":
                used = np.asarray(scale_used, dtype=bool).copy()
                if pinned_scale is not None:
                    used[pinned_scale] = False
                idx = np.flatnonzero(used)
                self.scale_cols[idx] = col + 3 * np.arange(len(idx))
                size = 3 * len(idx)
            self.segments[name] = (col, size)
            col += size
        self.size = col

    def has(self, name: str) -> bool:
        return name in self.segments and self.segments[name][1] > 0

    def columns(self, name: str) -> np.ndarray:
        if name not in self.segments:
            return np.zeros(0, dtype=np.int64)
        s, n = self.segments[name]
        return np.arange(s, s + n)

    def describe_column(self, col: int) -> str:
        for name, (s, n) in self.segments.items():
            if s <= col < s + n:
                return f"{name}[{col - s}]"
        return f"column {col}"

    def steps(self, state: CalibrationState) -> np.ndarray:
        """Central-difference step per column."""
        h = np.full(self.size, 6e-6)
        for name, (s, n) in self.segments.items():
            if name == "scale_knots":
                k = np.flatnonzero(self.scale_cols >= 0)
                mag = np.maximum(1.0, np.abs(state.scale_spline.knots[k])).ravel()
                h[s:s + n] = 6e-6 * mag
            elif name.startswith("offset:") or name.startswith("readout:"):
                h[s:s + n] = 1e-6
            elif name.startswith("invdepth:"):
                lam = state.inv_depth[name.split(":", 1)[1]]
                h[s:s + n] = 1e-6 * np.maximum(np.abs(lam), 1e-2)
        return h

    def retract(self, state: CalibrationState, delta: np.ndarray, clip: bool = True) -> CalibrationState:
        out = state.copy()
        for name, (s, n) in self.segments.items():
            if n == 0:
                continue
            d = delta[s:s + n]
            if not np.any(d):
                continue
            if name == "rot_knots":
                k = np.flatnonzero(self.rot_cols >= 0)
                kn = out.rot_spline.knots
                kn[k] = kn[k] @ so3_exp(d.reshape(-1, 3))
            elif name == "scale_knots":
                k = np.flatnonzero(self.scale_cols >= 0)
                out.scale_spline.knots[k] += d.reshape(-1, 3)
            elif name == "gravity":
                g = state.gravity
                mag = np.linalg.norm(g)
                B = sphere_basis(g)
                g_new = so3_exp(d @ B) @ g
                out.gravity = g_new * (mag / np.linalg.norm(g_new))
            else:
                head, sensor = name.split(":", 1)
                if head == "rot":
                    e = out.extrinsics[sensor]
                    e.rotation = e.rotation @ so3_exp(d)
                elif head == "pos":
                    out.extrinsics[sensor].translation = out.extrinsics[sensor].translation + d
                elif head == "offset":
                    v = out.extrinsics[sensor].offset + float(d[0])
                    if clip:
                        v = float(np.clip(v, -self.offset_bound, self.offset_bound))
                    out.extrinsics[sensor].offset = v
                elif head == "readout":
                    v = out.readout[sensor] + float(d[0])
                    out.readout[sensor] = max(v, 0.0) if clip else v
                elif head == "vscale":
                    v = out.visual_scale[sensor] + float(d[0])
                    out.visual_scale[sensor] = max(v, 1e-6) if clip else v
                elif head == "invdepth":
                    v = out.inv_depth[sensor] + d
                    out.inv_depth[sensor] = np.maximum(v, 1e-6) if clip else v
                elif head == "intr":
                    out.imu_intrinsics[sensor] = _retract_intrinsics(out.imu_intrinsics[sensor], d)
        return out


def _retract_intrinsics(intr: ImuIntrinsics, d) -> ImuIntrinsics:
    M = intr.M_a.copy()
    for k, (i, j) in enumerate(_UPPER):
        M[i, j] += d[k]
    n = len(_UPPER)
    return ImuIntrinsics(M, intr.M_w.copy(), intr.R_aw.copy(), intr.b_a + d[n:n + 3], intr.b_w + d[n + 3:n + 6])
