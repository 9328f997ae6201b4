import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctcalib.assoc import (associate, anchor_inverse_depths, build_reprojection_pairs, build_surfel_map,
                           downsample_correspondences)
from ctcalib.config import make_rig
from ctcalib.kinematics import evaluate_motion, sensor_pose
from ctcalib.sim import make_scenario, true_state


def plane_points(rng, n, normal, d, center, extent=0.2):
    normal = normal / np.linalg.norm(normal)
    a = np.cross(normal, [1.0, 0.0, 0.0] if abs(normal[0]) < 0.9 else [0.0, 1.0, 0.0])
    a /= np.linalg.norm(a)
    b = np.cross(normal, a)
    uv = rng.uniform(-extent, extent, (n, 2))
    base = center - (normal @ center + d) * normal
    return base + uv[:, :1] * a + uv[:, 1:] * b


def test_planar_voxel_normal_and_planarity():
    rng = np.random.default_rng(0)
    n = np.array([0.3, -0.2, 0.93])
    n /= np.linalg.norm(n)
    pts = plane_points(rng, 5000, n, -0.5, np.array([0.5, 0.5, 0.5]), 0.1)
    smap = build_surfel_map(pts, voxel_sizes=(4.0,), min_points=20)
    lv = smap.levels[0]
    assert len(lv.keys) == 1
    assert lv.planarity[0] > 0.9
    ang = np.degrees(np.arccos(min(1.0, abs(lv.normal[0] @ n))))
    assert ang < 2.0
    assert lv.d[0] >= 0
    assert np.isclose(lv.d[0], -lv.normal[0] @ lv.mean[0])


def test_isotropic_cloud_is_not_planar():
    rng = np.random.default_rng(1)
    pts = 0.05 * rng.standard_normal((2000, 3)) + 2.0
    lv = build_surfel_map(pts, voxel_sizes=(8.0,)).levels[0]
    assert lv.planarity[0] < 0.2


def test_too_few_points_give_no_surfel():
    pts = np.array([[0.1, 0.1, 0.1], [0.2, 0.1, 0.1]])
    smap = build_surfel_map(pts, voxel_sizes=(1.0,), min_points=2)
    assert smap.n_surfels == 0
    assert len(associate(smap, pts)) == 0


def test_point_on_plane_associates():
    rng = np.random.default_rng(2)
    pts = plane_points(rng, 500, np.array([0.0, 0.0, 1.0]), -0.3, np.array([0.5, 0.5, 0.3]), 0.2)
    smap = build_surfel_map(pts)
    m = associate(smap, np.array([[0.45, 0.55, 0.305], [0.5, 0.5, 5.0]]))
    assert m.index.tolist() == [0]
    assert np.allclose(np.abs(m.normal[0]), [0.0, 0.0, 1.0], atol=1e-6)
    assert abs(m.distance[0]) < 0.10


def test_higher_planarity_wins():
    rng = np.random.default_rng(3)
    flat = plane_points(rng, 400, np.array([0.0, 0.0, 1.0]), -0.5, np.array([0.5, 0.5, 0.5]), 0.12)
    # coarse voxel sees a second, tilted sheet too, which lowers its planarity
    other = plane_points(rng, 150, np.array([0.0, 0.4, 1.0]), -0.6, np.array([1.5, 1.5, 0.6]), 0.4)
    smap = build_surfel_map(np.vstack([flat, other]), voxel_sizes=(4.0, 1.0))
    q = flat[:5]
    m = associate(smap, q)
    coarse, fine = smap.levels
    assert fine.planarity.max() > coarse.planarity[0]
    assert np.all(m.level == 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000))
def test_emitted_pairs_respect_distance(seed):
    rng = np.random.default_rng(seed)
    pts = np.vstack([plane_points(rng, 300, rng.normal(size=3), rng.uniform(-1, 1), rng.uniform(-2, 2, 3), 0.6)
                     for _ in range(3)])
    pts += 0.01 * rng.standard_normal(pts.shape)
    smap = build_surfel_map(pts)
    m = associate(smap, pts)
    assert np.all(np.abs(np.sum(m.normal * pts[m.index], axis=1) + m.d) <= 0.10)
    assert np.allclose(np.linalg.norm(m.normal, axis=1), 1.0)
    again = associate(build_surfel_map(pts), pts)
    assert np.array_equal(m.index, again.index) and np.array_equal(m.surfel, again.surfel)


def test_downsample_cap():
    t = np.linspace(0.0, 9.9, 100)
    keep = downsample_correspondences(np.zeros(100, dtype=int), t, 10)
    assert len(keep) == 10
    gaps = np.diff(t[keep])
    assert gaps.max() - gaps.min() < 0.15
    assert len(downsample_correspondences(np.zeros(5, dtype=int), t[:5], 10)) == 5
    ids = np.r_[np.zeros(100, dtype=int), np.ones(20, dtype=int)]
    keep = downsample_correspondences(ids, np.r_[t, t[:20]], 10)
    assert np.bincount(ids[keep]).tolist() == [10, 10]
    with pytest.raises(ValueError):
        downsample_correspondences(ids, np.r_[t, t[:20]], 0)


def test_reprojection_pairs_anchor_first_view():
    t = np.array([0.3, 0.1, 0.2, 0.5, 0.4, 0.0])
    lm = np.array([7, 7, 7, 7, 7, 3])
    pr = build_reprojection_pairs(t, lm, 3, 10)
    assert len(pr) == 4
    assert np.all(pr.anchor == 1)
    assert pr.landmark_ids.tolist() == [7]
    assert len(build_reprojection_pairs(t[:1], lm[:1])) == 0


def test_inverse_depth_of_a_two_metre_point():
    cfg = make_rig(1, 0, 0, 1, simulation={"duration": 2.0, "landmarks": 10})
    sc = make_scenario(cfg, 0)
    state = true_state(sc)
    state.visual_scale["cam0"] = 1.0
    e = state.extrinsics["cam0"]
    t_anchor, row, h = np.array([1.0]), np.array([100.0]), 480.0
    tq = t_anchor + e.offset + (row / h - 0.5) * state.readout["cam0"]
    m = evaluate_motion(state.rot_spline, state.scale_spline, "translation", tq, 0, ("p",))
    R_c, p_c = sensor_pose(m, e.rotation, e.translation)
    pw = R_c[0] @ np.array([0.3, -0.1, 2.0]) + p_c[0]
    lam = anchor_inverse_depths(state, "cam0", t_anchor, row, h, pw[None])
    assert abs(lam[0] - 0.5) < 1e-9
