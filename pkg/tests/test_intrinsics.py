import numpy as np
import pytest

from ctcalib.estimator.intrinsics import (ObservabilityError, StationaryPiece, calibrate_imu_intrinsics_stationary,
                                          calibrate_rig_stationary, check_stationary)
from ctcalib.sensors import ImuIntrinsics
from ctcalib.sim import simulate_stationary, six_face_directions

TWELVE = np.vstack([six_face_directions(),
                    np.array([[1, 1, 1], [-1, 1, 1], [1, -1, 1], [1, 1, -1], [-1, -1, 1], [1, -1, -1]]) / np.sqrt(3)])


@pytest.mark.parametrize("seed", range(3))
def test_six_face_accelerometer_bias(seed):
    truth = ImuIntrinsics(b_a=[0.05, -0.02, 0.03])
    pieces, dirs = simulate_stationary(truth, six_face_directions(), seed=seed, sigma_accel=0.01)
    cal = calibrate_imu_intrinsics_stationary(pieces, sigma_accel=0.01)
    assert np.abs(cal.intrinsics.b_a - truth.b_a).max() < 1e-3
    assert np.allclose(np.linalg.norm(cal.gravity_vectors, axis=1), 9.81)
    cos = np.sum(cal.gravity_directions * dirs, axis=1)
    assert np.degrees(np.arccos(np.clip(cos, -1, 1))).max() < 0.05


def test_identity_intrinsics_stay_identity():
    pieces, _ = simulate_stationary(ImuIntrinsics(), TWELVE, seed=4)
    cal = calibrate_imu_intrinsics_stationary(pieces)
    assert np.abs(cal.intrinsics.M_a - np.eye(3)).max() < 1e-4


def test_full_accelerometer_intrinsics_from_twelve_poses():
    truth = ImuIntrinsics(M_a=[[1.01, 0.003, -0.002], [0.0, 0.995, 0.001], [0.0, 0.0, 1.004]],
                          b_a=[0.05, -0.02, 0.03], b_w=[2e-3, -1e-3, 5e-4])
    pieces, _ = simulate_stationary(truth, TWELVE, seed=1)
    cal = calibrate_imu_intrinsics_stationary(pieces)
    assert np.abs(cal.intrinsics.M_a - truth.M_a).max() < 1e-3
    assert np.abs(cal.intrinsics.b_a - truth.b_a).max() < 1e-3
    assert np.abs(cal.intrinsics.b_w - truth.b_w).max() < 1e-4
    assert not any("non-orthogonality" in u for u in cal.unobservable)


def test_gyro_scale_is_flagged_not_estimated():
    truth = ImuIntrinsics(M_w=np.diag([1.05, 0.97, 1.02]), b_w=[1e-3, 0.0, -2e-3])
    pieces, _ = simulate_stationary(truth, six_face_directions(), seed=2)
    cal = calibrate_imu_intrinsics_stationary(pieces)
    assert np.allclose(cal.intrinsics.M_w, np.eye(3))
    assert any("gyroscope scale" in u for u in cal.unobservable)
    assert np.abs(cal.intrinsics.b_w - truth.b_w).max() < 1e-4


def test_too_few_pieces():
    pieces, _ = simulate_stationary(ImuIntrinsics(), six_face_directions()[:5])
    with pytest.raises(ObservabilityError, match="at least 6"):
        calibrate_imu_intrinsics_stationary(pieces)


def test_coplanar_directions():
    ang = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    dirs = np.column_stack([np.cos(ang), np.sin(ang), np.zeros(8)])
    pieces, _ = simulate_stationary(ImuIntrinsics(), dirs, tilt=0.0)
    with pytest.raises(ObservabilityError, match="coplanar"):
        calibrate_imu_intrinsics_stationary(pieces)


def test_moving_piece_is_rejected():
    dirs = np.vstack([six_face_directions(), [[0.6, 0.8, 0.0]]])
    pieces, _ = simulate_stationary(ImuIntrinsics(b_a=[0.05, -0.02, 0.03]), dirs, seed=3, moving=(6,))
    assert check_stationary(pieces[6], 0.1, 0.01) is not None
    assert check_stationary(pieces[0], 0.1, 0.01) is None
    cal = calibrate_imu_intrinsics_stationary(pieces)
    assert list(cal.rejected) == [6]
    assert cal.used == list(range(6))
    assert np.abs(cal.intrinsics.b_a - [0.05, -0.02, 0.03]).max() < 1e-3


def test_rig_wrapper():
    pieces, _ = simulate_stationary(ImuIntrinsics(), six_face_directions(), seed=5)
    out = calibrate_rig_stationary({"imu0": pieces, "imu1": pieces})
    assert set(out) == {"imu0", "imu1"}
    bad = StationaryPiece(np.zeros((3, 3)), np.zeros((3, 3)))
    assert check_stationary(bad, 0.1, 0.01) is None
