import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctcalib.lie import so3_exp, so3_log
from ctcalib.spline import (KnotGrid, OutOfSupportError, R3Spline, So3Spline, UnderConstrainedError, basis_matrix,
                            blending_weights, cumulative_basis, fit_r3, fit_so3)
from oracles import fd_derivative, fd_world_rate, r3_value, random_rotation, so3_value


def random_splines(seed, n_knots=10, dt=0.1, spread=0.8):
    rng = np.random.default_rng(seed)
    grid = KnotGrid(rng.uniform(-1, 1), dt, n_knots)
    rot = So3Spline(grid, random_rotation(rng) @ so3_exp(np.cumsum(rng.normal(scale=spread, size=(n_knots, 3)), 0)))
    pos = R3Spline(grid, rng.normal(size=(n_knots, 3)))
    return grid, rot, pos, rng


def interior_times(grid, rng, n, margin=2e-3):
    """Query times kept away from knots so differences never straddle one."""
    lo, hi = grid.support
    seg = rng.integers(0, int(round((hi - lo) / grid.dt)), n)
    return lo + (seg + rng.uniform(margin / grid.dt, 1 - margin / grid.dt, n)) * grid.dt


@given(st.floats(0.0, 0.999999))
def test_cumulative_basis_partition(u):
    lam = cumulative_basis(u)
    assert np.isclose(lam[0], 1.0)
    w = blending_weights(np.array([u]), 0, 1.0)[0]
    assert np.isclose(w.sum(), 1.0)
    assert np.all(w >= -1e-15)


def test_cumulative_basis_rejects_out_of_range():
    with pytest.raises(ValueError):
        cumulative_basis(1.0)


def test_r3_matches_matrix_form():
    grid, _, pos, rng = random_splines(1)
    t = interior_times(grid, rng, 30)
    want = np.array([r3_value(pos.knots, grid.start_time, grid.dt, x) for x in t])
    assert np.allclose(pos.evaluate(t), want, atol=1e-12)


def test_so3_matches_scipy_composition():
    grid, rot, _, rng = random_splines(2)
    t = interior_times(grid, rng, 30)
    want = np.array([so3_value(rot.knots, grid.start_time, grid.dt, x) for x in t])
    assert np.allclose(rot.evaluate(t), want, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_derivatives_match_differences(seed):
    grid, rot, pos, rng = random_splines(seed)
    t = interior_times(grid, rng, 20)
    k = rot.kinematics(t, 2)
    pf = lambda x: r3_value(pos.knots, grid.start_time, grid.dt, x)
    rf = lambda x: so3_value(rot.knots, grid.start_time, grid.dt, x)
    for i, x in enumerate(t):
        assert np.allclose(pos.evaluate(x, 1), fd_derivative(pf, x, 1e-5), atol=1e-7)
        assert np.allclose(pos.evaluate(x, 2), fd_derivative(pf, x, 1e-4, 2), atol=1e-4)
        assert np.allclose(k.omega_world[i], fd_world_rate(rf, x), atol=1e-6)
        alpha = fd_derivative(lambda y: fd_world_rate(rf, y), x, 1e-4)
        assert np.allclose(k.alpha_world[i], alpha, atol=1e-4)
    assert np.allclose(k.omega_body, np.einsum("nji,nj->ni", k.rotation, k.omega_world))


def test_c2_continuity_at_knots():
    grid, rot, pos, _ = random_splines(7)
    knots = grid.knot_times()[2:-3]
    eps = 1e-9
    for order in range(3):
        a, b = pos.evaluate(knots - eps, order), pos.evaluate(knots + eps, order)
        assert np.abs(a - b).max() < 1e-5
    ka, kb = rot.kinematics(knots - eps, 2), rot.kinematics(knots + eps, 2)
    assert np.abs(ka.rotation - kb.rotation).max() < 1e-7
    assert np.abs(ka.omega_world - kb.omega_world).max() < 1e-5
    assert np.abs(ka.alpha_world - kb.alpha_world).max() < 1e-5


def test_knot_jacobians_match_differences():
    grid, rot, _, rng = random_splines(3)
    t = interior_times(grid, rng, 8)
    k = rot.kinematics_jacobian(t, 2)
    h = 1e-6
    for i, x in enumerate(t):
        for col in range(12):
            m, ax = divmod(col, 3)
            out = []
            for s in (h, -h):
                sp = rot.copy()
                e = np.zeros(3)
                e[ax] = s
                sp.knots[k.first[i] + m] = sp.knots[k.first[i] + m] @ so3_exp(e)
                out.append(sp.kinematics(np.array([x]), 2))
            dR = (so3_log(k.rotation[i].T @ out[0].rotation[0]) - so3_log(k.rotation[i].T @ out[1].rotation[0])) / (2 * h)
            assert np.allclose(dR, k.d_rotation[i][:, col], atol=1e-6)
            dw = (out[0].omega_world[0] - out[1].omega_world[0]) / (2 * h)
            assert np.allclose(dw, k.d_omega[i][:, col], atol=1e-5)
            da = (out[0].alpha_world[0] - out[1].alpha_world[0]) / (2 * h)
            assert np.allclose(da, k.d_alpha[i][:, col], atol=1e-3 * max(1.0, np.abs(k.d_alpha[i]).max()))


def test_out_of_support_raises():
    grid, rot, pos, _ = random_splines(0)
    lo, hi = grid.support
    with pytest.raises(OutOfSupportError):
        pos.evaluate(np.array([hi + 1e-3]))
    with pytest.raises(OutOfSupportError):
        rot.evaluate(np.array([lo - 1e-3]))
    _, ok = pos.evaluate_masked(np.array([lo - 1.0, lo + 0.01, hi]))
    assert ok.tolist() == [False, True, False]


def test_covering_grid_contains_span():
    g = KnotGrid.covering(0.3, 10.2, 0.05, padding=0.1, anchor=0.0)
    lo, hi = g.support
    assert lo <= 0.2 and hi >= 10.3
    # aligned to the anchor
    assert np.isclose((g.start_time / 0.05) % 1.0, 0.0) or np.isclose((g.start_time / 0.05) % 1.0, 1.0)


def test_fit_r3_reproduces_a_spline():
    grid, _, pos, rng = random_splines(4)
    t = np.linspace(*grid.support, 400, endpoint=False)
    fit, rms = fit_r3(t, pos.evaluate(t), grid)
    assert rms < 1e-9
    assert np.allclose(fit.knots, pos.knots, atol=1e-8)


def test_fit_r3_flags_untouched_knots():
    grid = KnotGrid(0.0, 0.1, 12)
    t = np.linspace(0.1, 0.3, 20)
    with pytest.raises(UnderConstrainedError):
        fit_r3(t, np.zeros((20, 3)), grid)


def test_basis_matrix_rows_sum_to_one():
    grid = KnotGrid(0.0, 0.1, 12)
    t = np.linspace(*grid.support, 50, endpoint=False)
    B = basis_matrix(grid, t).toarray()
    assert np.allclose(B.sum(axis=1), 1.0)
    assert np.allclose(basis_matrix(grid, t, 1).toarray().sum(axis=1), 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_fit_so3_seeds_from_nearest_samples(seed):
    rng = np.random.default_rng(seed)
    grid = KnotGrid(0.0, 0.1, 8)
    t = np.linspace(0.0, 0.7, 71)
    R = so3_exp(rng.normal(size=(71, 3)))
    sp = fit_so3(t, R, grid)
    for i, kt in enumerate(grid.knot_times()):
        j = min(np.searchsorted(t, kt), len(t) - 1)
        assert np.allclose(sp.knots[i], R[j])


def test_serialization_round_trip():
    _, rot, pos, _ = random_splines(5)
    assert np.allclose(So3Spline.from_dict(rot.to_dict()).knots, rot.knots, atol=1e-15)
    assert np.array_equal(R3Spline.from_dict(pos.to_dict()).knots, pos.knots)
