"""Forward measurement models for IMUs, radars and cameras."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    pass


class BehindCameraError(DomainError):
    pass


class NumericalError(RuntimeError):
    pass


@dataclass
class ImuIntrinsics:
    """Upper-triangular scale/non-orthogonality maps, gyro misalignment and biases."""

    M_a: np.ndarray = field(default_factory=lambda: np.eye(3))
    M_w: np.ndarray = field(default_factory=lambda: np.eye(3))
    R_aw: np.ndarray = field(default_factory=lambda: np.eye(3))
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_w: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("M_a", "M_w", "R_aw"):
            setattr(self, name, np.array(getattr(self, name), dtype=float).reshape(3, 3))
        self.b_a = np.array(self.b_a, dtype=float).reshape(3)
        self.b_w = np.array(self.b_w, dtype=float).reshape(3)
        for name in ("M_a", "M_w"):
            M = getattr(self, name)
            if np.any(np.tril(M, -1) != 0.0):
                raise ValueError(f"{name} must be upper triangular")
            if np.any(np.diag(M) <= 0.0):
                raise ValueError(f"{name} must have a positive diagonal")

    @property
    def gyro_is_identity(self) -> bool:
        return bool(np.allclose(self.M_w, np.eye(3)) and np.allclose(self.R_aw, np.eye(3)))

    def copy(self) -> "ImuIntrinsics":
        return ImuIntrinsics(self.M_a.copy(), self.M_w.copy(), self.R_aw.copy(), self.b_a.copy(), self.b_w.copy())

    def correct_accel(self, a_meas):
        """Invert the accelerometer model (noise-free)."""
        return np.linalg.solve(self.M_a, (np.asarray(a_meas) - self.b_a).T).T

    def correct_gyro(self, w_meas):
        G = self.M_w @ self.R_aw
        return np.linalg.solve(G, (np.asarray(w_meas) - self.b_w).T).T

    def to_dict(self):
        return {
            "M_a": self.M_a.tolist(),
            "M_w": self.M_w.tolist(),
            "R_aw": self.R_aw.tolist(),
            "b_a": self.b_a.tolist(),
            "b_w": self.b_w.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        if d is None:
            return cls()
        return cls(**{k: np.asarray(v, dtype=float) for k, v in d.items()})


def imu_forward(a_ideal, w_ideal, intr: ImuIntrinsics):
    """Ideal specific force / angular rate to raw measurements (no noise)."""
    a = np.asarray(a_ideal, dtype=float)
    w = np.asarray(w_ideal, dtype=float)
    a_meas = a @ intr.M_a.T + intr.b_a
    w_meas = w @ (intr.M_w @ intr.R_aw).T + intr.b_w
    return a_meas, w_meas


def radar_doppler(p_target, v_in_radar):
    """Radial velocity ``p^T v / |p|``; for a static target pass the negated radar velocity."""
    p = np.asarray(p_target, dtype=float)
    v = np.asarray(v_in_radar, dtype=float)
    n = np.linalg.norm(p, axis=-1)
    if np.any(n <= 0.0):
        raise DomainError("radar target at zero range")
    return np.sum(p * v, axis=-1) / n


@dataclass
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    distortion: str = "brown"  # "brown" (k1, k2, p1, p2, k3) or "fisheye" (k1..k4)
    coeffs: tuple = ()
    readout_time: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.height <= 0:
            raise ValueError("image height must be positive")
        if self.readout_time < 0:
            raise ValueError("readout time must be non-negative")
        if self.distortion not in ("brown", "fisheye"):
            raise ValueError(f"unknown distortion model {self.distortion!r}")
        n = 5 if self.distortion == "brown" else 4
        c = list(self.coeffs) + [0.0] * (n - len(self.coeffs))
        self.coeffs = tuple(float(x) for x in c[:n])

    def to_dict(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "distortion": self.distortion, "coeffs": list(self.coeffs),
            "readout_time": self.readout_time,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def distort(xn, yn, intr: CameraIntrinsics):
    if intr.distortion == "brown":
        k1, k2, p1, p2, k3 = intr.coeffs
        r2 = xn * xn + yn * yn
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        xd = xn * radial + 2.0 * p1 * xn * yn + p2 * (r2 + 2.0 * xn * xn)
        yd = yn * radial + p1 * (r2 + 2.0 * yn * yn) + 2.0 * p2 * xn * yn
        return xd, yd
    k1, k2, k3, k4 = intr.coeffs
    r = np.sqrt(xn * xn + yn * yn)
    th = np.arctan(r)
    th2 = th * th
    thd = th * (1.0 + th2 * (k1 + th2 * (k2 + th2 * (k3 + th2 * k4))))
    safe = r > 1e-12
    scale = np.where(safe, thd / np.where(safe, r, 1.0), 1.0)
    return xn * scale, yn * scale


def undistort(xd, yd, intr: CameraIntrinsics, max_iter: int = 20, tol: float = 1e-10):
    """Fixed-point inversion of :func:`distort`."""
    xd = np.asarray(xd, dtype=float)
    yd = np.asarray(yd, dtype=float)
    if not any(intr.coeffs):
        return xd.copy(), yd.copy()
    if intr.distortion == "brown":
        k1, k2, p1, p2, k3 = intr.coeffs
        x, y = xd.copy(), yd.copy()
        for _ in range(max_iter):
            r2 = x * x + y * y
            radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
            dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
            dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
            xn = (xd - dx) / radial
            yn = (yd - dy) / radial
            step = np.max(np.abs(np.concatenate([np.ravel(xn - x), np.ravel(yn - y)])))
            x, y = xn, yn
            if step < tol:
                return x, y
        raise NumericalError("undistortion did not converge")
    k1, k2, k3, k4 = intr.coeffs
    thd = np.sqrt(xd * xd + yd * yd)
    th = thd.copy()
    for _ in range(max_iter):
        th2 = th * th
        th_new = thd / (1.0 + th2 * (k1 + th2 * (k2 + th2 * (k3 + th2 * k4))))
        step = np.max(np.abs(np.ravel(th_new - th))) if th.size else 0.0
        th = th_new
        if step < tol:
            safe = thd > 1e-12
            scale = np.where(safe, np.tan(th) / np.where(safe, thd, 1.0), 1.0)
            return xd * scale, yd * scale
    raise NumericalError("undistortion did not converge")


def project_masked(p_cam, intr: CameraIntrinsics):
    """Vectorised projection; returns (pixels, depth_ok mask)."""
    p = np.asarray(p_cam, dtype=float)
    z = p[..., 2]
    ok = z > 1e-6
    zs = np.where(ok, z, 1.0)
    xd, yd = distort(p[..., 0] / zs, p[..., 1] / zs, intr)
    uv = np.stack([intr.fx * xd + intr.cx, intr.fy * yd + intr.cy], axis=-1)
    return uv, ok


def project(p_cam, intr: CameraIntrinsics):
    uv, ok = project_masked(p_cam, intr)
    if not np.all(ok):
        raise BehindCameraError("point at or behind the image plane")
    return uv


def unproject(pixel, inv_depth, intr: CameraIntrinsics):
    """Pixel and inverse depth to a camera-frame point."""
    px = np.asarray(pixel, dtype=float)
    lam = np.asarray(inv_depth, dtype=float)
    if np.any(lam <= 0.0):
        raise DomainError("inverse depth must be positive")
    ray = normalized_ray(px, intr)
    return ray / lam[..., None] if np.ndim(lam) else ray / float(lam)


def normalized_ray(pixel, intr: CameraIntrinsics):
    """Undistorted ray ``(x, y, 1)`` of a pixel."""
    px = np.asarray(pixel, dtype=float)
    xd = (px[..., 0] - intr.cx) / intr.fx
    yd = (px[..., 1] - intr.cy) / intr.fy
    x, y = undistort(xd, yd, intr)
    return np.stack([x, y, np.ones_like(x)], axis=-1)


def rs_row_time(t_frame, row, height, readout_time):
    """Exposure time of an image row, the middle row being exposed at ``t_frame``."""
    row = np.asarray(row, dtype=float)
    if np.any((row < 0) | (row >= height)):
        raise DomainError("row outside the image")
    return t_frame + (row / height - 0.5) * readout_time
