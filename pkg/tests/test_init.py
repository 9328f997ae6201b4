import numpy as np
import pytest

from ctcalib.config import make_rig
from ctcalib.data import OdometryStream
from ctcalib.init.handeye import DegenerateMotionError, relative_pairs, rotation_hand_eye
from ctcalib.init.pipeline import run_initialization
from ctcalib.init.radar import DegenerateScanError, estimate_radar_ego_velocity
from ctcalib.init.rotation import dead_reckon, kabsch
from ctcalib.lie import geodesic_deg, so3_exp
from ctcalib.report import world_alignment
from ctcalib.sim import simulate
from oracles import random_rotation, rotvec_exp

RANSAC = {"threshold": 0.1, "min_inliers": 5, "iterations": 100}


def test_kabsch_recovers_rotation():
    rng = np.random.default_rng(0)
    R = random_rotation(rng)
    src = rng.normal(size=(30, 3))
    R_est, S = kabsch(src, src @ R.T)
    assert np.allclose(R_est, R, atol=1e-12)
    assert S.min() > 0


def test_dead_reckon_constant_rate():
    t = np.linspace(0.0, 2.0, 2001)
    w = np.tile([0.0, 0.0, 0.5], (len(t), 1))
    R = dead_reckon(t, w)
    assert np.allclose(R[0], np.eye(3))
    assert np.allclose(R[-1], rotvec_exp([0.0, 0.0, 1.0]), atol=1e-12)


def test_radar_ransac_rejects_movers():
    rng = np.random.default_rng(3)
    d = rng.normal(size=(40, 3))
    d[:, 0] = np.abs(d[:, 0]) + 0.5
    p = 5.0 * d / np.linalg.norm(d, axis=1, keepdims=True)
    v_true = np.array([1.5, -0.3, 0.2])
    v = -(p / 5.0) @ v_true + 0.01 * rng.normal(size=40)
    movers = rng.choice(40, 8, replace=False)
    v[movers] += rng.uniform(0.5, 3.0, 8)
    x, inl = estimate_radar_ego_velocity(p, v, RANSAC, rng)
    assert np.allclose(x, v_true, atol=0.02)
    assert not inl[movers].any()
    assert inl.sum() == 32


def test_radar_degenerate_scans():
    with pytest.raises(DegenerateScanError):
        estimate_radar_ego_velocity(np.eye(3)[:2], np.zeros(2), RANSAC)
    coplanar = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0], [2.0, -1.0, 0.0]])
    with pytest.raises(DegenerateScanError, match="coplanar"):
        estimate_radar_ego_velocity(coplanar, np.zeros(4), RANSAC)


def test_relative_pairs_gap():
    i, j = relative_pairs(np.arange(0.0, 1.0, 0.05), 0.2)
    assert np.allclose(j - i, 4)


@pytest.fixture(scope="module")
def lidar_sim():
    cfg = make_rig(1, 0, 1, simulation={"duration": 10.0, "noise_scale": 0.0, "landmarks": 10})
    return simulate(cfg, 2)


def test_hand_eye_recovers_rotation_and_offset(lidar_sim):
    sc = lidar_sim.scenario
    R, tau, info = rotation_hand_eye(lidar_sim.data.odometry["lidar0"], sc.rot_spline)
    assert geodesic_deg(R, sc.sensors["lidar0"].rotation) < 0.01
    assert abs(tau - sc.sensors["lidar0"].time_offset) < 1e-4


def test_hand_eye_single_axis_motion_is_degenerate():
    t = np.arange(0.0, 10.0, 0.1)
    R = so3_exp(np.outer(0.8 * np.sin(t), [0.0, 0.0, 1.0]))
    od = OdometryStream(t, R, np.zeros((len(t), 3)))
    with pytest.raises(DegenerateMotionError, match="one axis"):
        rotation_hand_eye(od, None)


@pytest.fixture(scope="module")
def clean_radar_init():
    cfg = make_rig(1, 1, simulation={"duration": 20.0, "noise_scale": 0.0, "outlier_fraction": 0.0})
    sim = simulate(cfg, 1)
    return sim, run_initialization(cfg, sim.data)


def test_noise_free_initialization(clean_radar_init):
    sim, init = clean_radar_init
    sc, st = sim.scenario, init.state
    Q = world_alignment(st.rot_spline, sc.rot_spline)
    g = Q @ st.gravity
    ang = np.degrees(np.arccos(g @ sc.gravity / (np.linalg.norm(g) * np.linalg.norm(sc.gravity))))
    assert ang < 0.05
    ext, tr = st.extrinsics["radar0"], sc.sensors["radar0"]
    assert np.linalg.norm(ext.translation - tr.translation) < 1e-3
    assert geodesic_deg(ext.rotation, tr.rotation) < 0.05
    aligned = [s for s in init.stages if s.name == "alignment"][-1]
    assert np.linalg.norm(aligned.estimates["translations"]["radar0"] - tr.translation) < 1e-3
    assert [s.name for s in init.stages][0] == "rotation"
    assert init.log()[-1]["stage"] == init.stages[-1].name


def test_world_alignment_undoes_a_yaw(clean_radar_init):
    sim, _ = clean_radar_init
    rot = sim.scenario.rot_spline.copy()
    Y = so3_exp(np.array([0.0, 0.0, 0.7]))
    rot.knots = np.einsum("ij,njk->nik", Y.T, rot.knots)
    assert np.allclose(world_alignment(rot, sim.scenario.rot_spline), Y, atol=1e-12)
