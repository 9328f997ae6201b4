"""Numerically integrated inertial terms over alignment windows.

For IMU i with rotation R_i and lever arm p_i in the reference body frame,
the reference-body acceleration is

    a(t) = R(t) R_i f_i(t) - (hat(alpha) + hat(w)^2) R(t) p_i + g

with f_i the corrected specific force. Integrating once and twice over a
window [t0, t1] gives

    v(t1) - v(t0) = c - A p_i + g dt
    p(t1) - p(t0) = v(t0) dt + d - B p_i + g dt^2 / 2

where c, A are single and d, B nested trapezoidal integrals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from ..data import ImuStream
from ..lie import hat
from ..sensors import ImuIntrinsics
from ..spline import So3Spline


@dataclass
class IntegrationTerms:
    t0: float
    t1: float
    c: np.ndarray
    d: np.ndarray
    A: np.ndarray
    B: np.ndarray

    @property
    def dt(self) -> float:
        return self.t1 - self.t0


class InertialSamples:
    """World-frame integrands of one IMU, sampled on its own (offset-corrected) stamps."""

    def __init__(self, stream: ImuStream, rot: So3Spline, R_i, offset: float, intr: ImuIntrinsics | None = None):
        a = stream.a if intr is None else intr.correct_accel(stream.a)
        t = stream.t + offset
        k = rot.kinematics(t, 2)
        keep = k.valid
        self.t = t[keep]
        R = k.rotation[keep]
        self.f = np.einsum("nij,nj->ni", R @ np.asarray(R_i), a[keep])
        w = k.omega_world[keep]
        al = k.alpha_world[keep]
        W = hat(w)
        self.K = (hat(al) + W @ W) @ R

    def _window(self, t0, t1):
        """Samples inside [t0, t1] with linearly interpolated end points."""
        i0, i1 = np.searchsorted(self.t, [t0, t1])
        if i0 == 0 or i1 >= len(self.t) or i1 - i0 < 1:
            return None
        idx = np.arange(i0 - 1, i1 + 1)
        t = self.t[idx].copy()
        f = self.f[idx].copy()
        K = self.K[idx].copy()
        for end, (a, b), target in ((0, (0, 1), t0), (-1, (-2, -1), t1)):
            s = (target - t[a]) / (t[b] - t[a])
            f[end] = f[a] + s * (f[b] - f[a])
            K[end] = K[a] + s * (K[b] - K[a])
            t[end] = target
        return t, f, K

    def terms(self, t0: float, t1: float) -> IntegrationTerms | None:
        win = self._window(t0, t1)
        if win is None:
            return None
        t, f, K = win
        c = trapezoid(f, t, axis=0)
        A = trapezoid(K, t, axis=0)
        d = trapezoid(cumulative_trapezoid(f, t, axis=0, initial=0.0), t, axis=0)
        B = trapezoid(cumulative_trapezoid(K, t, axis=0, initial=0.0), t, axis=0)
        return IntegrationTerms(float(t0), float(t1), c, d, A, B)


def compute_integration_terms(stream: ImuStream, rot: So3Spline, R_i, offset: float, windows,
                              intr: ImuIntrinsics | None = None) -> list[IntegrationTerms | None]:
    """Terms for each ``(t0, t1)`` window; windows without samples come back as None."""
    s = InertialSamples(stream, rot, R_i, offset, intr)
    return [s.terms(a, b) for a, b in windows]
