"""Least-squares problem assembly: whitening, Cauchy loss and sparse Jacobians.

Knot columns are obtained by the chain rule: analytic derivatives of the
spline quantities (rotation, angular rate and acceleration, translation)
w.r.t. the window knots, times central differences of the family head
w.r.t. those quantities. Columns that do not move the query times are
differenced through the head only; offsets and readout times are
differenced through the full evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse

from ..config import ConfigError
from ..lie import so3_exp
from ..state import CalibrationState
from .layout import Layout, all_segments, is_frozen
from .residuals import ResidualFamily

_HEAD_STEP = 1e-6


@dataclass
class FamilyStats:
    kind: str
    sensor: str
    rows: int
    active: int
    cost: float


@dataclass
class Linearization:
    residual: np.ndarray
    jacobian: sparse.csr_matrix
    cost: float
    stats: list[FamilyStats] = field(default_factory=list)


def cauchy(s, c):
    """Cauchy loss of a squared whitened norm ``s`` with scale ``c``; returns (rho, rho')."""
    if c is None:
        return s, np.ones_like(s)
    c2 = c * c
    return c2 * np.log1p(s / c2), 1.0 / (1.0 + s / c2)


def _perturbed(m, name, axis, h):
    """Copy of a motion with one quantity nudged along ``axis`` by per-row steps ``h``."""
    if name == "R":
        e = np.zeros((len(h), 3))
        e[:, axis] = h
        return replace(m, R=m.R @ so3_exp(e))
    val = getattr(m, name).copy()
    val[:, axis] += h
    return replace(m, **{name: val})


class Problem:
    def __init__(self, families: list[ResidualFamily], state: CalibrationState, frozen=(),
                 offset_bound: float = 0.1, pin_first_rot_knot: bool = False,
                 pin_first_scale_knot: bool = False, robust: bool = True):
        self.families = [f for f in families if f.n > 0]
        if not self.families:
            raise ConfigError("no active residual blocks")
        self.robust = robust
        frozen = set(frozen)
        if state.scale_spline is None:
            frozen.add("scale_knots")
        segs = [(n, s) for n, s in all_segments(state) if not is_frozen(n, frozen, state.kinds)]
        rot_used = np.zeros(state.rot_spline.grid.count, dtype=bool)
        scale_used = np.zeros(state.scale_spline.grid.count, dtype=bool) if state.scale_spline else None
        for fam in self.families:
            for tq, (_, trans) in zip(fam.query_times(state), fam.queries):
                first, _, valid = state.rot_spline.grid.locate(tq)
                rot_used[(first[valid][:, None] + np.arange(4)).ravel()] = True
                if trans is not None and scale_used is not None:
                    first, _, valid = state.scale_spline.grid.locate(tq)
                    scale_used[(first[valid][:, None] + np.arange(4)).ravel()] = True
        pin_r = np.flatnonzero(rot_used)[:1] if pin_first_rot_knot else None
        pin_s = np.flatnonzero(scale_used)[:1] if (pin_first_scale_knot and scale_used is not None) else None
        self.layout = Layout(state, segs, rot_used, scale_used, offset_bound, pin_r, pin_s)
        self._check_reached(state)

    def _check_reached(self, state):
        reached = {"rot_knots"}
        for fam in self.families:
            reached.update(fam.global_segments(state))
            if fam.extra_columns(self.layout) is not None:
                reached.add(f"invdepth:{fam.sensor}")
            if fam.uses_scale:
                reached.add("scale_knots")
        missing = [n for n, (s, k) in self.layout.segments.items() if k > 0 and n not in reached]
        if missing:
            raise ConfigError([f"parameter {n!r} is optimized but no residual block reaches it" for n in missing])

    # -- Jacobian -----------------------------------------------------------------------------

    def _head_diff(self, fam, state, motions, qi, name, axis):
        m = motions[qi]
        x = getattr(m, name) if name != "R" else None
        h = np.full(fam.n, _HEAD_STEP) if x is None else _HEAD_STEP * np.maximum(1.0, np.abs(x).max(axis=1))
        mp = list(motions)
        mp[qi] = _perturbed(m, name, axis, h)
        rp, ap = fam.head(state, mp)
        mp[qi] = _perturbed(m, name, axis, -h)
        rm, am = fam.head(state, mp)
        out = (rp - rm) / (2.0 * h)[:, None]
        out[~(ap & am)] = 0.0
        return out

    def _knot_blocks(self, fam, state, motions, active):
        L = self.layout
        n, dim = fam.n, fam.dim
        blocks = []
        for qi, (order, trans) in enumerate(fam.queries):
            m = motions[qi]
            names = ["R"] + (["w"] if order >= 1 else []) + (["alpha"] if order >= 2 else [])
            derivs = {"R": m.d_R, "w": m.d_w, "alpha": m.d_alpha}
            if L.has("rot_knots"):
                J = np.zeros((n, dim, 12))
                for name in names:
                    dr = np.stack([self._head_diff(fam, state, motions, qi, name, a) for a in range(3)], axis=2)
                    J += dr @ derivs[name]
                kc = L.rot_cols[m.rot_first[:, None] + np.arange(4)]
                cols = np.where(kc[:, :, None] >= 0, kc[:, :, None] + np.arange(3), -1).reshape(n, 12)
                blocks.append((cols, J))
            if trans is not None and L.has("scale_knots"):
                dq = np.stack([self._head_diff(fam, state, motions, qi, trans, a) for a in range(3)], axis=2)
                J = (m.scale_weights[:, None, :, None] * dq[:, :, None, :]).reshape(n, dim, 12)
                kc = L.scale_cols[m.scale_first[:, None] + np.arange(4)]
                cols = np.where(kc[:, :, None] >= 0, kc[:, :, None] + np.arange(3), -1).reshape(n, 12)
                blocks.append((cols, J))
        return blocks

    def _global_blocks(self, fam, state, motions, steps):
        L = self.layout
        n = fam.n
        blocks = []
        timing = set(fam.time_segments(state))
        delta = np.zeros(L.size)
        for seg in fam.global_segments(state):
            if not L.has(seg):
                continue
            for c in L.columns(seg):
                delta[:] = 0.0
                delta[c] = steps[c]
                sp = L.retract(state, delta, clip=False)
                sm = L.retract(state, -delta, clip=False)
                if seg in timing:
                    rp, ap = fam.evaluate(sp)
                    rm, am = fam.evaluate(sm)
                else:
                    rp, ap = fam.head(sp, motions)
                    rm, am = fam.head(sm, motions)
                val = (rp - rm) / (2.0 * steps[c])
                val[~(ap & am)] = 0.0
                blocks.append((np.full((n, 1), c), val[:, :, None]))
        extra = fam.extra_columns(L)
        if extra is not None:
            delta[:] = 0.0
            delta[extra] = steps[extra]
            rp, ap = fam.head(L.retract(state, delta, clip=False), motions)
            rm, am = fam.head(L.retract(state, -delta, clip=False), motions)
            val = (rp - rm) / (2.0 * steps[extra])[:, None]
            val[~(ap & am)] = 0.0
            blocks.append((extra[:, None], val[:, :, None]))
        return blocks

    def family_jacobian(self, fam, state, active, steps):
        """Rows, columns and (k, dim) values of one family's Jacobian (before whitening)."""
        motions = fam.motions(state, jacobian=True)
        blocks = self._knot_blocks(fam, state, motions, active) + self._global_blocks(fam, state, motions, steps)
        out_r, out_c, out_v = [], [], []
        rows = np.arange(fam.n)
        for cols, J in blocks:
            k = cols.shape[1]
            rr = np.repeat(rows, k)
            cc = cols.ravel()
            vv = np.swapaxes(J, 1, 2).reshape(-1, fam.dim)
            keep = (cc >= 0) & active[rr]
            out_r.append(rr[keep])
            out_c.append(cc[keep])
            out_v.append(vv[keep])
        if not out_r:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros((0, fam.dim))
        return np.concatenate(out_r), np.concatenate(out_c), np.concatenate(out_v)

    # -- cost ---------------------------------------------------------------------------------

    def _weights(self, fam, r, active):
        e = r / fam.sigma
        s = np.sum(e * e, axis=1)
        c = fam.loss_scale / fam.sigma if (self.robust and fam.loss_scale is not None) else None
        rho, drho = cauchy(s, c)
        rho = np.where(active, rho, 0.0)
        w = np.where(active, np.sqrt(drho), 0.0)
        return e, w, 0.5 * float(np.sum(rho))

    def evaluate(self, state):
        return [fam.evaluate(state) for fam in self.families]

    def cost(self, state) -> float:
        total = 0.0
        for fam in self.families:
            r, active = fam.evaluate(state)
            total += self._weights(fam, r, active)[2]
        return total

    def family_costs(self, state) -> list[FamilyStats]:
        out = []
        for fam in self.families:
            r, active = fam.evaluate(state)
            out.append(FamilyStats(fam.kind, fam.sensor, fam.n, int(active.sum()), self._weights(fam, r, active)[2]))
        return out

    def linearize(self, state) -> Linearization:
        """Whitened, loss-reweighted residual vector and Jacobian (IRLS form)."""
        steps = self.layout.steps(state)
        res, J_r, J_c, J_v = [], [], [], []
        offset = 0
        total = 0.0
        stats = []
        for fam in self.families:
            r, active = fam.evaluate(state)
            e, w, cost = self._weights(fam, r, active)
            total += cost
            stats.append(FamilyStats(fam.kind, fam.sensor, fam.n, int(active.sum()), cost))
            res.append((e * w[:, None]).ravel())
            rr, cc, vv = self.family_jacobian(fam, state, active, steps)
            if rr.size:
                vv = vv * (w[rr] / fam.sigma)[:, None]
                d = fam.dim
                J_r.append((offset + rr[:, None] * d + np.arange(d)).ravel())
                J_c.append(np.repeat(cc, d))
                J_v.append(vv.ravel())
            offset += fam.n * fam.dim
        rvec = np.concatenate(res)
        if J_r:
            J = sparse.csr_matrix((np.concatenate(J_v), (np.concatenate(J_r), np.concatenate(J_c))),
                                  shape=(offset, self.layout.size))
        else:
            J = sparse.csr_matrix((offset, self.layout.size))
        return Linearization(rvec, J, total, stats)

    def block_information(self, state, prefix: str) -> dict[str, float]:
        """Smallest singular value of the Gauss-Newton sub-block of each segment starting with ``prefix``."""
        J = None
        out = {}
        for name in self.layout.segments:
            if not name.startswith(prefix) or not self.layout.has(name):
                continue
            if J is None:
                J = self.linearize(state).jacobian.tocsc()
            Jb = J[:, self.layout.columns(name)].toarray()
            out[name] = float(np.linalg.svd(Jb.T @ Jb, compute_uv=False)[-1])
        return out

    def retract(self, state, delta):
        return self.layout.retract(state, delta, clip=True)

    def solve(self, state, options=None, snapshot=None):
        """Run LM from ``state``; returns ``(state, SolveReport)``."""
        from .solver import levenberg_marquardt

        def lin(x):
            L = self.linearize(x)
            return L.residual, L.jacobian, L.cost

        return levenberg_marquardt(state, lin, self.cost, self.retract, options, snapshot)
