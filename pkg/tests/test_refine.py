import numpy as np
import pytest

from ctcalib.config import make_rig
from ctcalib.estimator.refine import default_schedule, gauge_settings, multi_batch_refine
from ctcalib.init.pipeline import run_initialization
from ctcalib.lie import geodesic_deg, so3_exp
from ctcalib.sim import simulate


def test_schedule_without_lidar():
    s = default_schedule(False)
    assert [b.name for b in s] == ["batch1", "batch2"]
    assert "imu_extrinsics" in s[0].frozen and "imu_extrinsics" not in s[1].frozen
    assert not any(b.rebuild_association for b in s)


def test_schedule_with_lidar_rebuilds_twice():
    s = default_schedule(True)
    assert [b.name for b in s] == ["batch1", "batch2", "batch3"]
    assert [b.rebuild_association for b in s] == [True, False, True]
    assert s[2].frozen == s[1].frozen


def test_intrinsics_flag_frees_them_after_batch_one():
    s = default_schedule(False, estimate_intrinsics=True)
    assert "imu_intrinsics" in s[0].frozen
    assert "imu_intrinsics" not in s[1].frozen
    assert len(default_schedule(True, batches=1)) == 1
    with pytest.raises(ValueError):
        default_schedule(True, batches=0)


@pytest.fixture(scope="module")
def radar_run():
    cfg = make_rig(1, 1, simulation={"duration": 8.0})
    sim = simulate(cfg, 9)
    init = run_initialization(cfg, sim.data)
    return cfg, sim, init


def _yawed(state, yaw):
    Y = so3_exp(np.array([0.0, 0.0, yaw]))
    out = state.copy()
    out.rot_spline.knots = np.einsum("ij,njk->nik", Y, out.rot_spline.knots)
    out.scale_spline.knots = out.scale_spline.knots @ Y.T
    out.gravity = Y @ out.gravity
    return out


def test_gauge_yaw_invariance(radar_run):
    cfg, sim, init = radar_run
    assert gauge_settings(init.state, False)["pin_first_rot_knot"]
    a = multi_batch_refine(cfg, sim.data, init.state, radar_inliers=init.radar_inliers, keep_snapshots=False)
    b = multi_batch_refine(cfg, sim.data, _yawed(init.state, 0.8), radar_inliers=init.radar_inliers,
                           keep_snapshots=False)
    assert len(a.batches) == 2 and a.rebuilds == 0
    ea, eb = a.state.extrinsics["radar0"], b.state.extrinsics["radar0"]
    assert geodesic_deg(ea.rotation, eb.rotation) < 1e-4
    assert np.linalg.norm(ea.translation - eb.translation) < 1e-5
    assert abs(ea.offset - eb.offset) < 1e-6
    assert a.batches[-1].solve.final_cost == pytest.approx(b.batches[-1].solve.final_cost, rel=1e-6)


def test_lidar_rig_rebuilds_association_twice():
    cfg = make_rig(1, 0, 1, simulation={"duration": 8.0})
    sim = simulate(cfg, 2)
    init = run_initialization(cfg, sim.data)
    ref = multi_batch_refine(cfg, sim.data, init.state, keep_snapshots=False)
    assert ref.rebuilds == 2
    assert [b.descriptor.name for b in ref.batches] == ["batch1", "batch2", "batch3"]
    assert ref.batches[0].association["lidar0"]["matched"] > 0
