# File: optics/geometry.py

"""Unit vectors, shading configurations and polarization reference frames.

Frame convention: the y-axis of a frame is the normalized component of the
surface normal N orthogonal to the propagation axis z (L for incident light,
-V for outgoing light). When that component vanishes, global +X is used, then
global +Y. The x-axis completes a right-handed set, x = y cross z.

Angles returned by ``frame_angle`` are right-handed rotations about +z
measured from the y-axis. Stokes vectors expressed in a frame use the x-axis
as the zero-angle polarizer reference, so the Mueller rotator ``C(phi)`` of
``optics.polarization`` turns a frame into one whose x-axis is
perpendicular to the projected facet normal.
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from utils.errors import GeometryError

UNIT_TOLERANCE = 1e-9
FRAME_FALLBACK_TOLERANCE = 1e-9
PROJECTION_TOLERANCE = 1e-12

_GLOBAL_X = np.array([1.0, 0.0, 0.0])
_GLOBAL_Y = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class Direction:
    x: float
    y: float
    z: float

    def __post_init__(self):
        norm = math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        if not math.isfinite(norm) or abs(norm - 1.0) > UNIT_TOLERANCE:
            raise GeometryError(f"direction is not unit length (norm {norm!r})")

    @classmethod
    def from_vector(cls, vector, normalize: bool = True) -> "Direction":
        v = np.asarray(vector, dtype=float).reshape(3)
        if normalize:
            norm = float(np.linalg.norm(v))
            if not math.isfinite(norm) or norm < PROJECTION_TOLERANCE:
                raise GeometryError("zero-length direction")
            v = v / norm
        return cls(float(v[0]), float(v[1]), float(v[2]))

    @classmethod
    def from_angles(cls, theta: float, phi: float) -> "Direction":
        """Spherical angles in radians, theta from +Z, phi from +X towards +Y."""
        s = math.sin(theta)
        return cls.from_vector((s * math.cos(phi), s * math.sin(phi), math.cos(theta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def dot(self, other: "Direction") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def __neg__(self) -> "Direction":
        return Direction(-self.x, -self.y, -self.z)


@dataclass(frozen=True)
class PolarizationFrame:
    z_axis: Direction
    x_axis: Direction
    y_axis: Direction


@dataclass(frozen=True)
class ShadingGeometry:
    N: Direction
    L: Direction
    V: Direction
    H: Direction
    theta_h: float
    theta_d: float
    cos_nl: float
    cos_nv: float

    @classmethod
    def from_directions(cls, N: Direction, L: Direction, V: Direction) -> "ShadingGeometry":
        H = halfway(L, V)
        cos_h = min(1.0, max(-1.0, N.dot(H)))
        cos_d = min(1.0, max(0.0, L.dot(H)))
        return cls(
            N=N, L=L, V=V, H=H,
            theta_h=math.acos(cos_h),
            theta_d=math.acos(cos_d),
            cos_nl=N.dot(L),
            cos_nv=N.dot(V),
        )


def halfway(L: Direction, V: Direction) -> Direction:
    s = L.as_array() + V.as_array()
    norm = float(np.linalg.norm(s))
    if norm < PROJECTION_TOLERANCE:
        raise GeometryError("antipodal directions")
    return Direction.from_vector(s / norm, normalize=True)


def make_frames(N: Direction, L: Direction, V: Direction) -> Tuple[PolarizationFrame, PolarizationFrame]:
    """Incident (z = L) and outgoing (z = -V) polarization frames."""
    if N.dot(L) <= 0.0 or N.dot(V) <= 0.0:
        raise GeometryError("below-horizon direction")
    incident = _frame_about(N.as_array(), L.as_array())
    outgoing = _frame_about(N.as_array(), -V.as_array())
    return incident, outgoing


def _frame_about(n: np.ndarray, z: np.ndarray) -> PolarizationFrame:
    x, y = frame_axes(n, z)
    return PolarizationFrame(
        z_axis=Direction.from_vector(z),
        x_axis=Direction.from_vector(x),
        y_axis=Direction.from_vector(y),
    )


def frame_angle(frame: PolarizationFrame, m: Direction) -> float:
    """Signed angle in (-pi, pi] from the frame y-axis to m projected on the x-y plane."""
    mv = m.as_array()
    px = float(mv @ frame.x_axis.as_array())
    py = float(mv @ frame.y_axis.as_array())
    if math.hypot(px, py) < PROJECTION_TOLERANCE:
        raise GeometryError("normal parallel to propagation")
    phi = math.atan2(-px, py)
    if phi <= -math.pi:
        phi += 2.0 * math.pi
    return phi


# Array versions. Shapes broadcast over leading axes; the last axis holds xyz.

def normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=-1)


def _reject(v: np.ndarray, z: np.ndarray) -> np.ndarray:
    return v - dot(v, z)[..., None] * z


def frame_axes(n: np.ndarray, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(x, y) axes of the frame about ``z`` for normals ``n``."""
    n, z = np.broadcast_arrays(np.asarray(n, dtype=float), np.asarray(z, dtype=float))
    y = _reject(n, z)
    norm = np.linalg.norm(y, axis=-1)
    for fallback in (_GLOBAL_X, _GLOBAL_Y):
        degenerate = norm < FRAME_FALLBACK_TOLERANCE
        if not np.any(degenerate):
            break
        candidate = _reject(np.broadcast_to(fallback, z.shape), z)
        y = np.where(degenerate[..., None], candidate, y)
        norm = np.linalg.norm(y, axis=-1)
    y = y / norm[..., None]
    x = np.cross(y, z)
    return x, y


def frame_angles(x: np.ndarray, y: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Vectorized ``frame_angle``; degenerate projections map to 0 instead of raising."""
    px = dot(m, x)
    py = dot(m, y)
    phi = np.arctan2(-px, py)
    phi = np.where(phi <= -np.pi, phi + 2.0 * np.pi, phi)
    return np.where(np.hypot(px, py) < PROJECTION_TOLERANCE, 0.0, phi)


def angle_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.arccos(np.clip(dot(a, b), -1.0, 1.0))
