# File: optics/fresnel.py

"""Fresnel reflectance and transmittance of a dielectric, intensity form.

Functions accept floats, numpy arrays or torch tensors; the torch path is
used by the differentiable fitting code and skips the domain checks.
"""

import math

import numpy as np

from utils.array_api import namespace
from utils.errors import FresnelDomainError

HALF_PI = 0.5 * math.pi
SNAP_TOLERANCE = 1e-9


def _as_output(value, like):
    if namespace(like) is np and np.ndim(like) == 0:
        return float(value)
    return value


def _check_mu(mu):
    if namespace(mu) is np and np.any(np.asarray(mu, dtype=float) < 1.0):
        raise FresnelDomainError(f"index of refraction must be >= 1, got {mu!r}")


def snap_theta(theta):
    """Clamp incidence angles into [0, pi/2]; reject violations above 1e-9 rad."""
    xp = namespace(theta)
    if xp is np:
        t = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(t)) or np.any(t < -SNAP_TOLERANCE) or np.any(t > HALF_PI + SNAP_TOLERANCE):
            raise FresnelDomainError("incidence angle outside [0, pi/2]")
        return np.clip(t, 0.0, HALF_PI)
    return xp.clip(theta, 0.0, HALF_PI)


def _ratio(num, den):
    xp = namespace(num, den)
    safe = xp.where(den > 0, den, 1.0 + 0.0 * den)
    return xp.where(den > 0, num / safe, 0.0 * num)


def fresnel_from_cos(mu, cos_i):
    """(Rs, Rp) for incidence cosines in [0, 1]."""
    xp = namespace(mu, cos_i)
    sin2 = xp.clip(1.0 - cos_i * cos_i, 0.0, 1.0)
    cos_t = xp.sqrt(xp.clip(1.0 - sin2 / (mu * mu), 0.0, 1.0))
    rs = _ratio(cos_i - mu * cos_t, cos_i + mu * cos_t)
    rp = _ratio(mu * cos_i - cos_t, mu * cos_i + cos_t)
    return rs * rs, rp * rp


def transmittance_from_cos(mu, cos_i):
    """(T+, T-) = ((Ts + Tp)/2, (Ts - Tp)/2) for incidence cosines."""
    rs, rp = fresnel_from_cos(mu, cos_i)
    ts = 1.0 - rs
    tp = 1.0 - rp
    return 0.5 * (ts + tp), 0.5 * (ts - tp)


def snell_theta_t(mu, theta):
    _check_mu(mu)
    t = snap_theta(theta)
    xp = namespace(mu, t)
    return _as_output(xp.arcsin(xp.sin(t) / mu), theta)


def fresnel_rs_rp(mu, theta):
    _check_mu(mu)
    t = snap_theta(theta)
    xp = namespace(mu, t)
    rs, rp = fresnel_from_cos(mu, xp.cos(t))
    return _as_output(rs, theta), _as_output(rp, theta)


def transmittances(mu, theta):
    """(Ts, Tp, Tunpol)."""
    rs, rp = fresnel_rs_rp(mu, theta)
    ts = 1.0 - rs
    tp = 1.0 - rp
    return ts, tp, 0.5 * (ts + tp)


def brewster_angle(mu) -> float:
    return math.atan(mu)
