import json

import numpy as np
import pytest

from ctcalib.config import ConfigError, PRESETS, config_from_dict, load_config, make_rig, rig_preset
from ctcalib.data import DataError, load_measurements, save_measurements
from ctcalib.kinematics import select_scale_mode
from ctcalib.sim import simulate


def _write(tmp_path, raw):
    p = tmp_path / "rig.json"
    p.write_text(json.dumps(raw))
    return p


def test_minimal_multi_imu_rig(tmp_path):
    cfg = load_config(_write(tmp_path, {"reference_imu": "a", "sensors": [
        {"name": "a", "kind": "imu"}, {"name": "b", "kind": "imu"}]}))
    assert cfg.counts["imu"] == 2
    assert cfg.sensor("b").noise["accel"] == 0.02


def test_single_imu_violates_sensor_count(tmp_path):
    with pytest.raises(ConfigError, match="sensor-count rule"):
        load_config(_write(tmp_path, {"reference_imu": "a", "sensors": [{"name": "a", "kind": "imu"}]}))


def test_duplicate_names():
    with pytest.raises(ConfigError, match="duplicate sensor name 'imu0'"):
        config_from_dict({"reference_imu": "imu0", "sensors": [
            {"name": "imu0", "kind": "imu"}, {"name": "imu0", "kind": "imu"}]})


def test_every_violation_is_listed():
    with pytest.raises(ConfigError) as info:
        config_from_dict({"sensors": [{"name": "r", "kind": "radar", "noise": {"doppler": 0.0}}]})
    msgs = info.value.violations
    assert any("reference IMU" in m for m in msgs)
    assert any("n_b >= 1" in m for m in msgs)
    assert any("sigma" in m for m in msgs)
    assert len(msgs) >= 3


def test_offset_bound_must_fit_padding():
    with pytest.raises(ConfigError, match="padding"):
        make_rig(2, offset_bound=0.5)


@pytest.mark.parametrize("name,mode", [
    ("m-i", "acceleration"), ("m-ri", "velocity"), ("m-li", "translation"), ("m-ci", "translation"),
    ("m-rli", "translation"), ("m-cri", "translation"), ("m-cli", "translation"), ("M_CLRI", "translation")])
def test_presets_and_scale_mode(name, mode):
    cfg = rig_preset(name)
    assert select_scale_mode(cfg.counts) == mode
    letters = name.lower().replace("_", "-").split("-")[1]
    for kind, letter in (("radar", "r"), ("lidar", "l"), ("camera", "c")):
        assert (cfg.counts[kind] > 0) == (letter in letters[:-1])


def test_unknown_preset():
    with pytest.raises(ConfigError):
        rig_preset("m-xyz")
    assert len(PRESETS) == 8


@pytest.fixture(scope="module")
def small_sim():
    cfg = make_rig(1, 1, 1, 1, simulation={"duration": 2.0, "landmarks": 100})
    return cfg, simulate(cfg, 5)


def test_measurement_round_trip(tmp_path, small_sim):
    cfg, res = small_sim
    save_measurements(res.data, tmp_path)
    ms = load_measurements(tmp_path, cfg)
    assert ms.counts() == res.data.counts()
    assert np.allclose(ms.imu["imu0"].a, res.data.imu["imu0"].a)
    assert np.array_equal(ms.lidar["lidar0"].scan, res.data.lidar["lidar0"].scan)
    assert np.allclose(ms.odometry["cam0"].R, res.data.odometry["cam0"].R, atol=1e-12)
    assert set(ms.odometry["cam0"].landmarks) == set(res.data.odometry["cam0"].landmarks)


def test_malformed_line_is_reported(tmp_path, small_sim):
    cfg, res = small_sim
    save_measurements(res.data, tmp_path)
    path = tmp_path / "imu0.jsonl"
    lines = path.read_text().splitlines()
    lines[16] = '{"t": 0.1, "a": [1, 2], "w": [0, 0, 0]}'
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match="line 17"):
        load_measurements(tmp_path, cfg)


def test_empty_radar_file(tmp_path, small_sim):
    cfg, res = small_sim
    save_measurements(res.data, tmp_path)
    (tmp_path / "radar0.jsonl").write_text("")
    with pytest.raises(DataError, match="missing data"):
        load_measurements(tmp_path, cfg)


def test_non_monotone_stamps(tmp_path, small_sim):
    cfg, res = small_sim
    save_measurements(res.data, tmp_path)
    path = tmp_path / "imu0.jsonl"
    lines = path.read_text().splitlines()
    lines[3], lines[4] = lines[4], lines[3]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match="non-monotone"):
        load_measurements(tmp_path, cfg)
