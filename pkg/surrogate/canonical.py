# File: surrogate/canonical.py

"""Isotropic reduction of (N, L, V) to the three angles the surrogate sees.

Azimuths are measured in the tangent plane of N from the reference direction
``e`` opposite the outgoing frame's y-axis, which for a non-normal view is
the tangent projection of V. Configurations with the light on the negative
side are mirrored onto ``dphi in [0, pi]``; the mirror flips the handedness
of the outgoing frame, so only s2 changes sign on the way back.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from optics.geometry import dot, frame_axes

_TANGENT_TOLERANCE = 1e-12


@dataclass(frozen=True)
class FrameMap:
    mirrored: np.ndarray

    def apply(self, stokes: np.ndarray) -> np.ndarray:
        """Canonical-frame Stokes (P, 3 or 4) to the caller's outgoing frames; an involution."""
        out = np.array(stokes, dtype=float, copy=True)
        out[..., 2] = np.where(self.mirrored, -out[..., 2], out[..., 2])
        return out

    @property
    def signs(self) -> np.ndarray:
        return np.where(self.mirrored, -1.0, 1.0)


def reference_azimuth(N: np.ndarray, V: np.ndarray) -> np.ndarray:
    _, y = frame_axes(N, -V)
    tangent = y - dot(y, N)[..., None] * N
    norm = np.linalg.norm(tangent, axis=-1, keepdims=True)
    return -tangent / np.where(norm > _TANGENT_TOLERANCE, norm, 1.0)


def canonicalize(N, L, V) -> Tuple[np.ndarray, np.ndarray, np.ndarray, FrameMap]:
    """(theta_L, theta_V, dphi, frame map) for stacked configurations."""
    N, L, V = np.broadcast_arrays(*(np.atleast_2d(np.asarray(a, dtype=float)) for a in (N, L, V)))
    cos_l = np.clip(dot(N, L), -1.0, 1.0)
    cos_v = np.clip(dot(N, V), -1.0, 1.0)
    e = reference_azimuth(N, V)
    f = np.cross(N, e)
    l_t = L - cos_l[..., None] * N
    signed = np.arctan2(dot(l_t, f), dot(l_t, e))
    signed = np.where(np.linalg.norm(l_t, axis=-1) < _TANGENT_TOLERANCE, 0.0, signed)
    return np.arccos(cos_l), np.arccos(cos_v), np.abs(signed), FrameMap(mirrored=signed < 0.0)


def configuration(theta_l, theta_v, dphi) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Canonical (N, L, V) with N = +Z, V in the x-z plane and L at azimuth dphi."""
    theta_l, theta_v, dphi = np.broadcast_arrays(*(np.atleast_1d(np.asarray(a, dtype=float)) for a in (theta_l, theta_v, dphi)))
    count = theta_l.shape[0]
    N = np.tile(np.array([0.0, 0.0, 1.0]), (count, 1))
    V = np.stack([np.sin(theta_v), np.zeros(count), np.cos(theta_v)], axis=-1)
    e = reference_azimuth(N, V)
    f = np.cross(N, e)
    sin_l = np.sin(theta_l)[:, None]
    L = np.cos(theta_l)[:, None] * N + sin_l * (np.cos(dphi)[:, None] * e + np.sin(dphi)[:, None] * f)
    L = L / np.linalg.norm(L, axis=-1, keepdims=True)
    return N, L, V
