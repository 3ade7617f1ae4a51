# File: optics/polarization.py

"""Stokes vectors and Mueller matrices for linear polarization.

s3 is carried as a structural zero so every matrix stays 4x4. Filter and
polarization angles are measured from the frame x-axis (see
``optics.geometry``).
"""

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from optics.fresnel import fresnel_rs_rp, transmittances, brewster_angle, snap_theta
from utils.errors import PolarizationError

REALIZABILITY_TOLERANCE = 1e-9


@dataclass(frozen=True)
class StokesVector:
    s0: float
    s1: float
    s2: float
    s3: float = 0.0

    @classmethod
    def from_array(cls, values) -> "StokesVector":
        v = np.asarray(values, dtype=float).reshape(-1)
        if v.size == 3:
            return cls(float(v[0]), float(v[1]), float(v[2]))
        return cls(float(v[0]), float(v[1]), float(v[2]), float(v[3]))

    @classmethod
    def unpolarized(cls, radiance: float) -> "StokesVector":
        return cls(float(radiance), 0.0, 0.0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.s0, self.s1, self.s2, self.s3])

    def is_realizable(self, tolerance: float = REALIZABILITY_TOLERANCE) -> bool:
        slack = tolerance * max(abs(self.s0), 1.0)
        return self.s0 >= -slack and math.hypot(self.s1, self.s2) <= self.s0 + slack

    def scaled(self, factor: float) -> "StokesVector":
        return StokesVector(self.s0 * factor, self.s1 * factor, self.s2 * factor, self.s3 * factor)

    def __add__(self, other: "StokesVector") -> "StokesVector":
        return StokesVector(self.s0 + other.s0, self.s1 + other.s1, self.s2 + other.s2, self.s3 + other.s3)


@dataclass(frozen=True)
class MuellerMatrix:
    m: np.ndarray

    def __post_init__(self):
        if np.shape(self.m) != (4, 4):
            raise PolarizationError(f"Mueller matrix must be 4x4, got {np.shape(self.m)}")

    def __matmul__(self, other: Union["MuellerMatrix", StokesVector]):
        if isinstance(other, MuellerMatrix):
            return MuellerMatrix(self.m @ other.m)
        if isinstance(other, StokesVector):
            return StokesVector.from_array(self.m @ other.as_array())
        return NotImplemented


def filter_intensity(s: StokesVector, phi_c: float) -> float:
    return 0.5 * (s.s0 + s.s1 * math.cos(2.0 * phi_c) + s.s2 * math.sin(2.0 * phi_c))


def stokes_from_four(i0: float, i45: float, i90: float, i135: float, strict: bool = True) -> StokesVector:
    """Stokes vector from polarizer readings at 0, 45, 90 and 135 degrees.

    With ``strict=False`` the linear part is shrunk onto the realizability
    cone instead of raising, which is what noisy measurements need.
    """
    s0 = i0 + i90
    s1 = i0 - i90
    s2 = i45 - i135
    if min(i0, i45, i90, i135) < 0.0 and strict:
        raise PolarizationError("inconsistent filter intensities")
    s = StokesVector(s0, s1, s2, 0.0)
    if s.is_realizable():
        return s
    if strict:
        raise PolarizationError("inconsistent filter intensities")
    return StokesVector.from_array(clamp_realizable(s.as_array()))


def clamp_realizable(s: np.ndarray) -> np.ndarray:
    """Project stacked Stokes arrays (..., >=3) onto s0 >= 0, |s12| <= s0."""
    s = np.array(s, dtype=float, copy=True)
    s[..., 0] = np.maximum(s[..., 0], 0.0)
    linear = np.hypot(s[..., 1], s[..., 2])
    with np.errstate(divide="ignore", invalid="ignore"):
        shrink = np.where(linear > s[..., 0], s[..., 0] / linear, 1.0)
    shrink = np.where(np.isfinite(shrink), shrink, 0.0)
    s[..., 1] *= shrink
    s[..., 2] *= shrink
    return s


def dolp(s: StokesVector) -> float:
    if not s.s0 > 0.0:
        raise PolarizationError("zero-radiance Stokes")
    return min(1.0, math.hypot(s.s1, s.s2) / s.s0)


def aolp(s: StokesVector) -> float:
    if not s.s0 > 0.0:
        raise PolarizationError("zero-radiance Stokes")
    if s.s1 == 0.0 and s.s2 == 0.0:
        return 0.0
    phi = 0.5 * math.atan2(s.s2, s.s1)
    if phi <= -0.5 * math.pi:
        phi += math.pi
    return phi


def dolp_array(s: np.ndarray) -> np.ndarray:
    """DoLP of stacked Stokes arrays; zero where s0 <= 0."""
    s0 = s[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.hypot(s[..., 1], s[..., 2]) / s0
    return np.where(s0 > 0.0, np.clip(rho, 0.0, 1.0), 0.0)


def aolp_array(s: np.ndarray) -> np.ndarray:
    phi = 0.5 * np.arctan2(s[..., 2], s[..., 1])
    return np.where(phi <= -0.5 * np.pi, phi + np.pi, phi)


def rotator(phi: float) -> MuellerMatrix:
    c = math.cos(2.0 * phi)
    s = math.sin(2.0 * phi)
    return MuellerMatrix(np.array([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, c, -s, 0.0],
        [0.0, s, c, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]))


def reflection_mueller(mu: float, theta: float) -> MuellerMatrix:
    rs, rp = fresnel_rs_rp(mu, theta)
    r_plus = 0.5 * (rs + rp)
    r_minus = 0.5 * (rs - rp)
    r_cross = math.sqrt(rs * rp)
    cos_delta = -1.0 if float(snap_theta(theta)) < brewster_angle(mu) else 1.0
    return MuellerMatrix(np.array([
        [r_plus, r_minus, 0.0, 0.0],
        [r_minus, r_plus, 0.0, 0.0],
        [0.0, 0.0, r_cross * cos_delta, 0.0],
        [0.0, 0.0, 0.0, r_cross * cos_delta],
    ]))


def transmission_mueller(mu: float, theta: float) -> MuellerMatrix:
    ts, tp, _ = transmittances(mu, theta)
    t_plus = 0.5 * (ts + tp)
    t_minus = 0.5 * (ts - tp)
    t_cross = math.sqrt(max(ts * tp, 0.0))
    return MuellerMatrix(np.array([
        [t_plus, t_minus, 0.0, 0.0],
        [t_minus, t_plus, 0.0, 0.0],
        [0.0, 0.0, t_cross, 0.0],
        [0.0, 0.0, 0.0, t_cross],
    ]))


def depolarizer(k: float) -> MuellerMatrix:
    if k < 0.0:
        raise PolarizationError(f"depolarizer gain must be >= 0, got {k}")
    m = np.zeros((4, 4))
    m[0, 0] = k
    return MuellerMatrix(m)


def rotate_stokes_array(s: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Apply C(phi) to stacked Stokes arrays (..., 3 or 4)."""
    c = np.cos(2.0 * phi)
    sn = np.sin(2.0 * phi)
    out = np.array(s, dtype=float, copy=True)
    out[..., 1] = c * s[..., 1] - sn * s[..., 2]
    out[..., 2] = sn * s[..., 1] + c * s[..., 2]
    return out


def stokes_from_four_array(i0, i45, i90, i135, strict: bool = True) -> np.ndarray:
    """Stacked version of ``stokes_from_four``, shape (..., 4)."""
    i0, i45, i90, i135 = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (i0, i45, i90, i135)))
    s = np.stack([i0 + i90, i0 - i90, i45 - i135, np.zeros_like(i0)], axis=-1)
    slack = REALIZABILITY_TOLERANCE * np.maximum(np.abs(s[..., 0]), 1.0)
    bad = (np.hypot(s[..., 1], s[..., 2]) > s[..., 0] + slack) | (np.minimum(np.minimum(i0, i45), np.minimum(i90, i135)) < 0.0)
    if np.any(bad):
        if strict:
            raise PolarizationError("inconsistent filter intensities")
        s = clamp_realizable(s)
    return s


def filter_images(s: np.ndarray, angles=(0.0, 0.25 * math.pi, 0.5 * math.pi, 0.75 * math.pi)) -> np.ndarray:
    """Polarizer readings (..., len(angles)) of stacked Stokes arrays."""
    return np.stack([0.5 * (s[..., 0] + s[..., 1] * math.cos(2.0 * a) + s[..., 2] * math.sin(2.0 * a)) for a in angles], axis=-1)
