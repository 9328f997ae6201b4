"""Command line: ``ctcalib simulate | calibrate | score | plot-data``."""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

from .config import ConfigError, resolve_rig
from .data import DataError, load_measurements, save_measurements
from .report import CalibrationReport, batch_statistics, score, write_plot_data
from .runner import StageFailure, run_calibration
from .sim import GroundTruthScenario, simulate

log = logging.getLogger("ctcalib")

TRUTH_FILE = "ground_truth.json"
RIG_FILE = "rig.json"
REPORT_FILE = "report.json"


def _rig(args):
    cfg = resolve_rig(args.rig)
    if args.seed is not None:
        cfg = cfg.with_settings(seed=args.seed)
    if args.batches is not None:
        cfg = cfg.with_settings(batches={"count": args.batches})
    return cfg


def _load_truth(directory: Path):
    p = directory / TRUTH_FILE
    return GroundTruthScenario.from_dict(json.loads(p.read_text())) if p.exists() else None


def cmd_simulate(args) -> int:
    cfg = _rig(args)
    out = Path(args.out)
    res = simulate(cfg, args.seed)
    save_measurements(res.data, out)
    (out / TRUTH_FILE).write_text(json.dumps(res.scenario.to_dict()))
    (out / RIG_FILE).write_text(json.dumps(cfg.to_dict(), indent=1, default=float))
    counts = {k: len(v) for group in (res.data.imu, res.data.radar, res.data.lidar, res.data.camera)
              for k, v in group.items()}
    print(json.dumps({"out": str(out), "seed": res.scenario.seed, "measurements": counts}))
    return 0


def cmd_calibrate(args) -> int:
    cfg = _rig(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.data:
        data_dir = Path(args.data)
        ms = load_measurements(data_dir, cfg)
        truth = _load_truth(data_dir)
        if truth is not None:
            shutil.copyfile(data_dir / TRUTH_FILE, out / TRUTH_FILE)
    else:
        res = simulate(cfg, args.seed)
        ms, truth = res.data, res.scenario
        (out / TRUTH_FILE).write_text(json.dumps(truth.to_dict()))
    try:
        run = run_calibration(cfg, ms, truth)
    except StageFailure as exc:
        if exc.report is not None:
            exc.report.save(out / REPORT_FILE)
        raise
    run.report.save(out / REPORT_FILE)
    write_plot_data(run.report, out)
    summary = {"report": str(out / REPORT_FILE), "sensors": {}}
    for n, s in run.report.sensors.items():
        summary["sensors"][n] = {"translation_m": s["translation_m"], "time_offset_s": s["time_offset_s"]}
    if run.report.errors:
        summary["errors"] = run.report.errors
    print(json.dumps(summary, indent=1))
    return 0


def _report_paths(paths: list[str]) -> list[Path]:
    out = []
    for p in map(Path, paths):
        out.append(p / REPORT_FILE if p.is_dir() else p)
    return out


def cmd_score(args) -> int:
    if not args.data:
        raise DataError("score needs --data (run directories or report files)")
    tables = {}
    for p in _report_paths(args.data):
        truth = _load_truth(p.parent)
        if truth is None:
            raise DataError(f"no {TRUTH_FILE} next to {p}")
        tables[str(p)] = score(CalibrationReport.load(p), truth)
    out = {"runs": tables}
    if len(tables) > 1:
        out["batch"] = batch_statistics(list(tables.values()))
    text = json.dumps(out, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def cmd_plot_data(args) -> int:
    if not args.data:
        raise DataError("plot-data needs --data (a run directory or report file)")
    written = []
    for p in _report_paths(args.data):
        written += write_plot_data(CalibrationReport.load(p), args.out or p.parent)
    print("\n".join(map(str, written)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctcalib", description="Continuous-time multi-sensor calibration")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p, rig=True):
        if rig:
            p.add_argument("--rig", required=True, help="rig config JSON or preset name (m-i ... m-clri)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--batches", type=int, default=None, help="run only the first N refinement batches")

    p = sub.add_parser("simulate", help="write synthetic measurements and ground truth")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="calibrate from --data, or from a fresh simulation without it")
    common(p)
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("score", help="errors against ground truth, with seed-batch STDs")
    p.add_argument("--data", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("plot-data", help="convergence and residual-histogram CSVs")
    p.add_argument("--data", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot_data)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageFailure as exc:
        print(f"error [{exc.stage}]: {exc.detail}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"error [data]: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
