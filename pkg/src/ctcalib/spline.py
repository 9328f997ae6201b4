"""Uniform cubic cumulative B-splines on R^3 and SO(3).

A query time ``t`` lies in segment ``s = floor((t - start) / dt)`` and uses
the four knots ``s-1 .. s+2`` with normalised time ``u = (t - start)/dt - s``.
The queryable interval is therefore ``[start + dt, start + (count - 2) dt)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded
from scipy.linalg import LinAlgError

from .lie import hat, quat_to_rot, rot_to_quat, so3_exp, so3_log, so3_right_jacobian, so3_right_jacobian_inv

# cumulative matrix of the cubic (order 4) uniform B-spline
CUMULATIVE_N4 = (
    np.array(
        [
            [6.0, 0.0, 0.0, 0.0],
            [5.0, 3.0, -3.0, 1.0],
            [1.0, 3.0, 3.0, -2.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    / 6.0
)


class OutOfSupportError(ValueError):
    def __init__(self, times, interval):
        self.interval = tuple(float(x) for x in interval)
        bad = np.atleast_1d(times)
        super().__init__(
            f"{bad.size} query time(s) outside spline support "
            f"[{self.interval[0]:.6f}, {self.interval[1]:.6f}), e.g. t={float(bad[0]):.6f}"
        )


class UnderConstrainedError(ValueError):
    def __init__(self, empty_knots):
        self.empty_knots = list(int(k) for k in empty_knots)
        shown = self.empty_knots[:20]
        super().__init__(f"spline fit under-constrained; knots without data: {shown}")


@dataclass(frozen=True)
class KnotGrid:
    start_time: float
    dt: float
    count: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("knot spacing must be positive")
        if self.count < 4:
            raise ValueError("a cubic spline needs at least 4 knots")

    @property
    def support(self) -> tuple[float, float]:
        return (self.start_time + self.dt, self.start_time + (self.count - 2) * self.dt)

    def knot_times(self) -> np.ndarray:
        return self.start_time + self.dt * np.arange(self.count)

    def locate(self, t):
        """Return (first knot index, u, valid mask) for each query time."""
        t = np.asarray(t, dtype=float)
        x = (t - self.start_time) / self.dt
        # snap round-off so a query exactly on a knot lands in the segment it starts
        near = np.round(x)
        x = np.where(np.abs(x - near) < 1e-9, near, x)
        seg = np.floor(x)
        u = x - seg
        first = seg.astype(np.int64) - 1
        valid = (first >= 0) & (first + 3 <= self.count - 1) & np.isfinite(t)
        first = np.clip(first, 0, self.count - 4)
        return first, u, valid

    @classmethod
    def covering(cls, t_min: float, t_max: float, dt: float, padding: float = 0.0, anchor: float = 0.0):
        """Smallest grid aligned to ``anchor + k*dt`` whose support covers the padded span."""
        lo = t_min - padding
        hi = t_max + padding
        # support starts at start + dt and ends at start + (count-2) dt
        k0 = int(np.floor((lo - anchor) / dt - 1e-9)) - 1
        start = anchor + k0 * dt
        count = int(np.floor((hi - start) / dt + 1e-9)) + 3
        return cls(start_time=start, dt=dt, count=max(count, 4))

    def to_dict(self):
        return {"start_time": self.start_time, "dt": self.dt, "count": self.count}


def cumulative_basis(u, derivative_order: int = 0, dt: float = 1.0) -> np.ndarray:
    """Cumulative basis vector ``lambda(u) = N4 @ [1, u, u^2, u^3]``.

    Derivatives are taken w.r.t. time, i.e. divided by ``dt**order``.
    Accepts scalar or array ``u``; the last axis of the result has size 4.
    """
    u = np.asarray(u, dtype=float)
    if np.any((u < 0.0) | (u >= 1.0)):
        raise ValueError("normalised time must lie in [0, 1)")
    return _basis(u, derivative_order, dt)


def _basis(u, order, dt):
    one = np.ones_like(u)
    zero = np.zeros_like(u)
    if order == 0:
        mono = np.stack([one, u, u * u, u * u * u], axis=-1)
    elif order == 1:
        mono = np.stack([zero, one, 2.0 * u, 3.0 * u * u], axis=-1) / dt
    elif order == 2:
        mono = np.stack([zero, zero, 2.0 * one, 6.0 * u], axis=-1) / (dt * dt)
    else:
        raise ValueError("derivative order must be 0, 1 or 2")
    return mono @ CUMULATIVE_N4.T


def blending_weights(u, order, dt):
    """Non-cumulative weights of the 4 window knots."""
    lam = _basis(u, order, dt)
    w = np.empty_like(lam)
    w[..., 0] = lam[..., 0] - lam[..., 1]
    w[..., 1] = lam[..., 1] - lam[..., 2]
    w[..., 2] = lam[..., 2] - lam[..., 3]
    w[..., 3] = lam[..., 3]
    return w


@dataclass
class R3Spline:
    grid: KnotGrid
    knots: np.ndarray  # (count, 3)

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        if self.knots.shape != (self.grid.count, 3):
            raise ValueError(f"expected knots of shape {(self.grid.count, 3)}, got {self.knots.shape}")

    def copy(self) -> "R3Spline":
        return R3Spline(self.grid, self.knots.copy())

    def evaluate_masked(self, t, order: int = 0):
        t = np.asarray(t, dtype=float)
        first, u, valid = self.grid.locate(t)
        w = blending_weights(u, order, self.grid.dt)
        idx = first[..., None] + np.arange(4)
        out = np.einsum("...j,...jk->...k", w, self.knots[idx])
        return out, valid

    def evaluate(self, t, order: int = 0) -> np.ndarray:
        out, valid = self.evaluate_masked(t, order)
        _check(t, valid, self.grid)
        return out

    def to_dict(self):
        return {**self.grid.to_dict(), "knots": self.knots.tolist()}

    @classmethod
    def from_dict(cls, d):
        knots = np.asarray(d["knots"], dtype=float)
        return cls(KnotGrid(float(d["start_time"]), float(d["dt"]), len(knots)), knots)


@dataclass
class So3Kinematics:
    rotation: np.ndarray
    omega_world: np.ndarray | None = None
    alpha_world: np.ndarray | None = None
    omega_body: np.ndarray | None = None
    valid: np.ndarray | None = None
    first: np.ndarray | None = None
    # derivatives w.r.t. right perturbations of the 4 window knots, shape (..., 3, 12)
    d_rotation: np.ndarray | None = None
    d_omega: np.ndarray | None = None
    d_alpha: np.ndarray | None = None


@dataclass
class So3Spline:
    grid: KnotGrid
    knots: np.ndarray  # (count, 3, 3)

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        if self.knots.shape != (self.grid.count, 3, 3):
            raise ValueError(f"expected knots of shape {(self.grid.count, 3, 3)}, got {self.knots.shape}")

    def copy(self) -> "So3Spline":
        return So3Spline(self.grid, self.knots.copy())

    def knot_deltas(self) -> np.ndarray:
        """``Log(R_k^T R_{k+1})`` for consecutive knots."""
        rel = np.swapaxes(self.knots[:-1], -1, -2) @ self.knots[1:]
        return so3_log(rel)

    def kinematics(self, t, order: int = 0, deltas: np.ndarray | None = None) -> So3Kinematics:
        """Rotation and, for order >= 1 / 2, world angular velocity / acceleration."""
        t = np.asarray(t, dtype=float)
        first, u, valid = self.grid.locate(t)
        if deltas is None:
            deltas = self.knot_deltas()
        dt = self.grid.dt
        lam = _basis(u, 0, dt)
        R = self.knots[first]
        d = [deltas[first + j - 1] for j in (1, 2, 3)]
        A = [so3_exp(lam[..., j, None] * d[j - 1]) for j in (1, 2, 3)]
        for Aj in A:
            R = R @ Aj
        out = So3Kinematics(rotation=R, valid=valid)
        if order == 0:
            return out
        dlam = _basis(u, 1, dt)
        w = np.zeros(t.shape + (3,))
        if order >= 2:
            ddlam = _basis(u, 2, dt)
            a = np.zeros_like(w)
        for j in (1, 2, 3):
            At = np.swapaxes(A[j - 1], -1, -2)
            w_rot = np.einsum("...ij,...j->...i", At, w)
            if order >= 2:
                a = (
                    np.einsum("...ij,...j->...i", At, a)
                    + ddlam[..., j, None] * d[j - 1]
                    + dlam[..., j, None] * np.cross(w_rot, d[j - 1])
                )
            w = w_rot + dlam[..., j, None] * d[j - 1]
        out.omega_body = w
        out.omega_world = np.einsum("...ij,...j->...i", R, w)
        if order >= 2:
            out.alpha_world = np.einsum("...ij,...j->...i", R, a)
        return out

    def kinematics_jacobian(self, t, order: int = 0, deltas: np.ndarray | None = None) -> So3Kinematics:
        """Like :meth:`kinematics`, plus analytic derivatives w.r.t. the window knots.

        Knot ``first + m`` is perturbed as ``R_k Exp(delta_m)``; the rotation
        derivative is expressed as a right perturbation of ``R(t)`` and the
        angular rates in the world frame.
        """
        t = np.asarray(t, dtype=float).reshape(-1)
        n = t.size
        first, u, valid = self.grid.locate(t)
        if deltas is None:
            deltas = self.knot_deltas()
        dt = self.grid.dt
        lam = _basis(u, 0, dt)
        dlam = _basis(u, 1, dt)
        ddlam = _basis(u, 2, dt)
        d = [deltas[first + j - 1] for j in (1, 2, 3)]
        A = [so3_exp(lam[:, j, None] * d[j - 1]) for j in (1, 2, 3)]
        # d_j = Log(K_{j-1}^T K_j) responds to both of its knots
        D = []
        for j in (1, 2, 3):
            Jinv = so3_right_jacobian_inv(d[j - 1])
            Dj = np.zeros((n, 3, 12))
            Dj[:, :, 3 * (j - 1):3 * j] = -np.swapaxes(Jinv, 1, 2)
            Dj[:, :, 3 * j:3 * j + 3] = Jinv
            D.append(Dj)
        # right perturbation of A_j
        E = [lam[:, j, None, None] * so3_right_jacobian(lam[:, j, None] * d[j - 1]) @ D[j - 1] for j in (1, 2, 3)]
        R = self.knots[first]
        for Aj in A:
            R = R @ Aj
        P = [A[0] @ A[1] @ A[2], A[1] @ A[2], A[2], None]
        eps = np.zeros((n, 3, 12))
        eps[:, :, 0:3] = np.swapaxes(P[0], 1, 2)
        for j in (1, 2):
            eps += np.swapaxes(P[j], 1, 2) @ E[j - 1]
        eps += E[2]
        out = So3Kinematics(rotation=R, valid=valid, first=first, d_rotation=eps)
        if order == 0:
            return out
        w = np.zeros((n, 3))
        dw = np.zeros((n, 3, 12))
        a = np.zeros((n, 3))
        da = np.zeros((n, 3, 12))
        for j in (1, 2, 3):
            At = np.swapaxes(A[j - 1], 1, 2)
            dj = d[j - 1]
            w_rot = np.einsum("nij,nj->ni", At, w)
            dw_rot = At @ dw + hat(w_rot) @ E[j - 1]
            if order >= 2:
                a_rot = np.einsum("nij,nj->ni", At, a)
                da = (At @ da + hat(a_rot) @ E[j - 1] + ddlam[:, j, None, None] * D[j - 1]
                      + dlam[:, j, None, None] * (-hat(dj) @ dw_rot + hat(w_rot) @ D[j - 1]))
                a = a_rot + ddlam[:, j, None] * dj + dlam[:, j, None] * np.cross(w_rot, dj)
            dw = dw_rot + dlam[:, j, None, None] * D[j - 1]
            w = w_rot + dlam[:, j, None] * dj
        out.omega_body = w
        out.omega_world = np.einsum("nij,nj->ni", R, w)
        out.d_omega = R @ (dw - hat(w) @ eps)
        if order >= 2:
            out.alpha_world = np.einsum("nij,nj->ni", R, a)
            out.d_alpha = R @ (da - hat(a) @ eps)
        return out

    def evaluate(self, t) -> np.ndarray:
        k = self.kinematics(t, 0)
        _check(t, k.valid, self.grid)
        return k.rotation

    def to_dict(self):
        return {**self.grid.to_dict(), "knots": rot_to_quat(self.knots).tolist()}

    @classmethod
    def from_dict(cls, d):
        knots = quat_to_rot(np.asarray(d["knots"], dtype=float))
        return cls(KnotGrid(float(d["start_time"]), float(d["dt"]), len(knots)), knots)


def _check(t, valid, grid):
    if not np.all(valid):
        bad = np.asarray(t, dtype=float)[~np.asarray(valid)] if np.ndim(t) else t
        raise OutOfSupportError(bad, grid.support)


def eval_r3(spline: R3Spline, t, order: int = 0) -> np.ndarray:
    return spline.evaluate(t, order)


def eval_so3(spline: So3Spline, t) -> np.ndarray:
    return spline.evaluate(t)


def eval_so3_velocity(spline: So3Spline, t):
    """World and body angular velocity at ``t``."""
    k = spline.kinematics(t, 1)
    _check(t, k.valid, spline.grid)
    return k.omega_world, k.omega_body


def eval_so3_acceleration(spline: So3Spline, t) -> np.ndarray:
    k = spline.kinematics(t, 2)
    _check(t, k.valid, spline.grid)
    return k.alpha_world


def basis_matrix(grid: KnotGrid, t, order: int = 0):
    """Sparse design matrix mapping knots to spline values (one row per time)."""
    from scipy.sparse import csr_matrix

    t = np.asarray(t, dtype=float)
    first, u, valid = grid.locate(t)
    if not np.all(valid):
        raise OutOfSupportError(t[~valid], grid.support)
    w = blending_weights(u, order, grid.dt)
    rows = np.repeat(np.arange(t.size), 4)
    cols = (first[:, None] + np.arange(4)).ravel()
    return csr_matrix((w.ravel(), (rows, cols)), shape=(t.size, grid.count))


def fit_r3(t, values, grid: KnotGrid, order: int = 0, weights=None):
    """Linear least-squares fit of R^3 knots to samples of the order-th derivative.

    Returns ``(spline, rms)``. Raises :class:`UnderConstrainedError` when the
    normal equations are singular, listing knots no sample touches.
    """
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float).reshape(-1, 3)
    A = basis_matrix(grid, t, order)
    if weights is not None:
        from scipy.sparse import diags

        Aw = diags(np.sqrt(np.asarray(weights, dtype=float))) @ A
        vw = values * np.sqrt(np.asarray(weights, dtype=float))[:, None]
    else:
        Aw, vw = A, values
    AtA = (Aw.T @ Aw).toarray() if grid.count < 64 else (Aw.T @ Aw).tocsr()
    touched = np.asarray(abs(A).sum(axis=0)).ravel() > 0
    if not np.all(touched):
        raise UnderConstrainedError(np.flatnonzero(~touched))
    band = _to_upper_band(AtA, grid.count, 3)
    try:
        chol = cholesky_banded(band)
    except LinAlgError:
        raise UnderConstrainedError([]) from None
    diag = chol[-1]
    if diag.min() ** 2 < 1e-12 * diag.max() ** 2:
        raise UnderConstrainedError(np.flatnonzero(diag ** 2 < 1e-12 * diag.max() ** 2))
    knots = cho_solve_banded((chol, False), Aw.T @ vw)
    spline = R3Spline(grid, knots)
    resid = A @ knots - values
    rms = float(np.sqrt(np.mean(np.sum(resid ** 2, axis=1)))) if len(t) else 0.0
    return spline, rms


def _to_upper_band(M, n, bw):
    band = np.zeros((bw + 1, n))
    if hasattr(M, "diagonal"):
        for k in range(bw + 1):
            band[bw - k, k:] = M.diagonal(k)
    return band


def fit_so3(t, rotations, grid: KnotGrid) -> So3Spline:
    """Seed rotation knots with the sampled rotation nearest to each knot time."""
    t = np.asarray(t, dtype=float)
    rotations = np.asarray(rotations, dtype=float)
    kt = grid.knot_times()
    idx = np.clip(np.searchsorted(t, kt), 0, len(t) - 1)
    return So3Spline(grid, rotations[idx].copy())
