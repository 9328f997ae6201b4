"""End-to-end calibration: initialization, association and multi-batch refinement."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

from .config import RigConfig
from .data import MeasurementSet
from .estimator.refine import FamilyBuilder, RefineResult, multi_batch_refine
from .init.pipeline import InitializationResult, run_initialization
from .report import CalibrationReport, build_report

log = logging.getLogger(__name__)


def _detail(exc: Exception) -> str:
    return getattr(exc, "detail", None) or str(exc)


class StageFailure(RuntimeError):
    def __init__(self, stage: str, message: str, report: CalibrationReport | None = None):
        self.stage = stage
        self.report = report
        self.detail = message
        super().__init__(f"[{stage}] {message}")


@dataclass
class CalibrationRun:
    init: InitializationResult
    refine: RefineResult
    report: CalibrationReport

    @property
    def state(self):
        return self.refine.state


def _stage_of(exc: Exception, default: str) -> str:
    stage = getattr(exc, "stage", None)
    if stage:
        return stage
    msg = _detail(exc)
    if msg.startswith("[") and "]" in msg:
        return msg[1:msg.index("]")]
    return default


def run_calibration(config: RigConfig, ms: MeasurementSet, truth=None) -> CalibrationRun:
    """Calibrate a rig from measurements; ``truth`` (a GroundTruthScenario) adds an error table.

    Failures raise StageFailure carrying the stage tag and a partial report.
    """
    clock = {}
    t0 = time.perf_counter()
    try:
        init = run_initialization(config, ms)
    except Exception as exc:
        raise StageFailure(_stage_of(exc, "initialization"), _detail(exc)) from exc
    clock["initialization"] = time.perf_counter() - t0
    log.info("initialization done in %.1f s", clock["initialization"])

    t1 = time.perf_counter()
    try:
        ref = multi_batch_refine(config, ms, init.state, init.landmarks_world, init.radar_inliers)
    except Exception as exc:
        partial = build_report(init.state, init, truth=truth, wall_clock=clock,
                               failure={"stage": _stage_of(exc, "refine"), "message": _detail(exc)})
        raise StageFailure(_stage_of(exc, "refine"), _detail(exc), partial) from exc
    clock["refinement"] = time.perf_counter() - t1

    # residual statistics over the final association, without robust weighting
    builder = FamilyBuilder(config, ms, init.landmarks_world, init.radar_inliers, robust=False)
    if ms.lidar:
        builder.rebuild_surfels(ref.state)
    # same deterministic pairs as the refinement; the copy keeps the refined depths untouched
    builder.init_cameras(ref.state.copy())
    report = build_report(ref.state, init, ref, builder.families(ref.state), truth, clock)
    return CalibrationRun(init, ref, report)
