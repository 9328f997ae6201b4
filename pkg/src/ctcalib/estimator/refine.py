"""Multi-batch continuous-time refinement.

Batch 1 holds the IMU spatiotemporal parameters fixed while the other
sensors and inverse depths settle; batch 2 frees everything (plus IMU
intrinsics when enabled). With a LiDAR the surfel map is rebuilt from the
refined trajectory and a third batch repeats batch 2.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from ..assoc import SurfelAssociation, associate_lidar
from ..config import RigConfig
from ..data import MeasurementSet
from ..state import CalibrationState, snapshot
from .families import camera_pairs_and_depths, doppler_families, inertial_families, reprojection_family, surfel_family
from .problem import FamilyStats, Problem
from .residuals import DopplerResidual
from .solver import SolveReport, SolverOptions

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BatchDescriptor:
    name: str
    frozen: tuple[str, ...] = ()
    rebuild_association: bool = False


@dataclass
class BatchReport:
    descriptor: BatchDescriptor
    solve: SolveReport
    families: list[FamilyStats] = field(default_factory=list)
    association: dict[str, dict] = field(default_factory=dict)
    intrinsic_information: dict[str, float] = field(default_factory=dict)

    def to_dict(self):
        return {
            "batch": self.descriptor.name,
            "frozen": list(self.descriptor.frozen),
            "rebuild_association": self.descriptor.rebuild_association,
            "status": self.solve.status,
            "iterations": self.solve.iterations,
            "costs": list(self.solve.costs),
            "gradient_norm": self.solve.gradient_norm,
            "families": [vars(f) for f in self.families],
            "association": self.association,
            "intrinsic_information": self.intrinsic_information,
        }


@dataclass
class RefineResult:
    state: CalibrationState
    batches: list[BatchReport] = field(default_factory=list)
    rebuilds: int = 0

    @property
    def cost_trace(self) -> list[float]:
        """Accepted-step costs over all batches (each batch's own starting cost included)."""
        return [c for b in self.batches for c in b.solve.costs]


def default_schedule(has_lidar: bool, estimate_intrinsics: bool = False,
                     batches: int | None = None) -> list[BatchDescriptor]:
    free_intr = () if estimate_intrinsics else ("imu_intrinsics",)
    out = [
        BatchDescriptor("batch1", ("imu_extrinsics", "imu_intrinsics"), rebuild_association=has_lidar),
        BatchDescriptor("batch2", free_intr),
    ]
    if has_lidar:
        out.append(BatchDescriptor("batch3", free_intr, rebuild_association=True))
    if batches is not None:
        if batches < 1:
            raise ValueError("at least one batch is required")
        out = out[:batches]
    return out


def gauge_settings(state: CalibrationState, has_lidar: bool) -> dict:
    """Which gauge freedoms need pinning for this rig.

    A surfel map fixed during a batch anchors the world frame, so only rigs
    without a LiDAR pin the first rotation knot (and, in camera-only
    translation mode, the first position knot). Gravity is not separable
    from an acceleration spline and stays at its initial value.
    """
    frozen = ("gravity",) if state.scale_mode == "acceleration" else ()
    # the visual scale only ever multiplies inverse-depth-lifted points, so it is
    # exactly redundant with the inverse depths and keeps its aligned value
    frozen += ("visual_scale",)
    pin_s = state.scale_mode == "translation" and not has_lidar
    return {"frozen": frozen, "pin_first_rot_knot": not has_lidar, "pin_first_scale_knot": pin_s}


class FamilyBuilder:
    """Keeps the per-sensor residual families, rebuilding LiDAR associations on demand."""

    def __init__(self, config: RigConfig, ms: MeasurementSet, landmarks_world: dict | None = None,
                 radar_inliers: dict | None = None, robust: bool = True):
        self.config = config
        self.ms = ms
        self.landmarks_world = landmarks_world or {}
        self.radar_inliers = radar_inliers or {}
        self.robust = robust
        self.associations: dict[str, SurfelAssociation] = {}
        self.camera_pairs: dict = {}
        self.rebuilds = 0

    def rebuild_surfels(self, state) -> dict[str, dict]:
        info = {}
        for name, ls in self.ms.lidar.items():
            a = associate_lidar(state, name, ls.t, ls.p, self.config["association"])
            self.associations[name] = a
            info[name] = {"pairs": int(len(a.t)), "surfels": a.n_surfels, "rms_m": a.rms,
                          "rms_used_m": a.rms_used, "matched": a.matched}
        self.rebuilds += 1
        return info

    def init_cameras(self, state) -> dict[str, dict]:
        info = {}
        for name in self.ms.camera:
            lw = self.landmarks_world.get(name, {})
            pairs, lam, skipped = camera_pairs_and_depths(state, name, self.ms, lw, self.config)
            self.camera_pairs[name] = pairs
            state.inv_depth[name] = lam
            info[name] = {"pairs": int(len(pairs)), "landmarks": int(len(lam)), "skipped_depth": skipped}
        return info

    def families(self, state):
        fams = inertial_families(state, self.ms, self.config, self.robust)
        for f in doppler_families(state, self.ms, self.config, self.robust):
            inl = self.radar_inliers.get(f.sensor)
            if inl is not None:
                f = DopplerResidual(f.sensor, f.t[inl], f.p[inl], f.v[inl], f.sigma, f.loss_scale)
            fams.append(f)
        for name, a in self.associations.items():
            fams.append(surfel_family(name, a, self.config, self.robust))
        for name, pairs in self.camera_pairs.items():
            if len(pairs):
                fams.append(reprojection_family(state, name, self.ms, pairs, self.config, self.robust))
        return fams


def multi_batch_refine(config: RigConfig, ms: MeasurementSet, state: CalibrationState,
                       landmarks_world: dict | None = None, radar_inliers: dict | None = None,
                       schedule: list[BatchDescriptor] | None = None, options: SolverOptions | None = None,
                       keep_snapshots: bool = True) -> RefineResult:
    """Run the batch schedule from an initialized state; returns the refined state and reports."""
    state = state.copy()
    has_lidar = bool(ms.lidar)
    est_intr = bool(config["batches"].get("estimate_imu_intrinsics", False))
    if schedule is None:
        schedule = default_schedule(has_lidar, est_intr, config["batches"].get("count"))
    options = options or SolverOptions.from_config(config["solver"])
    gauge = gauge_settings(state, has_lidar)
    builder = FamilyBuilder(config, ms, landmarks_world, radar_inliers)
    cam_info = builder.init_cameras(state)
    out = RefineResult(state)
    for bi, desc in enumerate(schedule):
        assoc_info = {}
        if desc.rebuild_association and has_lidar:
            assoc_info = builder.rebuild_surfels(state)
        elif has_lidar and not builder.associations:
            assoc_info = builder.rebuild_surfels(state)
        if bi == 0:
            assoc_info.update(cam_info)
        frozen = tuple(desc.frozen) + gauge["frozen"]
        prob = Problem(builder.families(state), state, frozen=frozen,
                       offset_bound=float(config["offset_bound"]),
                       pin_first_rot_knot=gauge["pin_first_rot_knot"],
                       pin_first_scale_knot=gauge["pin_first_scale_knot"])
        info = prob.block_information(state, "intr:") if est_intr else {}
        for name, smin in info.items():
            log.info("%s: %s information min singular value %.3g", desc.name, name, smin)
        try:
            state, rep = prob.solve(state, options, snapshot if keep_snapshots else None)
        except Exception as exc:
            raise RuntimeError(f"[{desc.name}] {exc}") from exc
        log.info("%s: %s after %d iterations, cost %.6g -> %.6g", desc.name, rep.status, rep.iterations,
                 rep.initial_cost, rep.final_cost)
        out.batches.append(BatchReport(desc, rep, prob.family_costs(state), assoc_info, info))
    out.state = state
    out.rebuilds = builder.rebuilds
    return out

