# File: surrogate/differentiable.py

"""Torch versions of the surface term and the NDF normalization.

Geometry-only quantities are computed once in numpy; only the parameter
dependence is traced by autograd.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.integrate import quad_vec

from microgeometry.microfacet import HALF_PI, TWO_PI, get_ndf
from optics.fresnel import fresnel_from_cos
from optics.geometry import dot, frame_angles, frame_axes
from utils.errors import GeometryError

GRAZING_FLOOR = 1e-6


def _shape_derivatives(alpha: float, beta: float) -> np.ndarray:
    """d/dalpha and d/dbeta of the cosine-weighted shape integral."""

    def integrand(t: float) -> np.ndarray:
        if t <= 0.0:
            return np.zeros(2)
        ratio = t / alpha
        u = ratio ** beta
        base = math.exp(-u) * math.cos(t) * math.sin(t)
        return np.array([base * u * beta / alpha, -base * u * math.log(ratio)])

    points = [p for p in (alpha, 3.0 * alpha) if p < HALF_PI]
    value, _ = quad_vec(integrand, 0.0, HALF_PI, epsabs=1e-15, epsrel=1e-11, points=points or None)
    return TWO_PI * value


class NormC(torch.autograd.Function):
    """NDF normalization constant with derivatives from differentiated integrals."""

    @staticmethod
    def forward(ctx, alpha: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
        a, b = float(alpha), float(beta)
        value = get_ndf(a, b).norm_c
        ctx.shape = (a, b, value)
        return alpha.new_tensor(value)

    @staticmethod
    def backward(ctx, grad: torch.Tensor):
        a, b, value = ctx.shape
        d_integral = _shape_derivatives(a, b)
        # norm_c = 1 / integral
        d_alpha, d_beta = -value * value * d_integral
        return grad * d_alpha, grad * d_beta


def ndf_torch(theta_h: torch.Tensor, alpha: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    ratio = torch.clamp(theta_h / alpha, min=1e-30)
    shape = torch.exp(-torch.exp(beta * torch.log(ratio)))
    return torch.where(theta_h < HALF_PI, NormC.apply(alpha, beta) * shape, torch.zeros_like(shape))


@dataclass
class SurfaceGeometry:
    """Per-configuration angles needed by the surface term and the surrogate inputs."""

    theta_h: torch.Tensor
    cos_d: torch.Tensor
    cos_v: torch.Tensor
    theta_l: torch.Tensor
    theta_v: torch.Tensor
    cos2_o: torch.Tensor
    sin2_o: torch.Tensor

    @classmethod
    def from_directions(cls, N, L, V) -> "SurfaceGeometry":
        N, L, V = np.broadcast_arrays(*(np.atleast_2d(np.asarray(a, dtype=float)) for a in (N, L, V)))
        H = L + V
        norm = np.linalg.norm(H, axis=-1)
        if np.any(norm < 1e-12):
            raise GeometryError("antipodal directions")
        H = H / norm[:, None]
        xo, yo = frame_axes(N, -V)
        phi_o = frame_angles(xo, yo, H)
        as_t = lambda a: torch.as_tensor(np.ascontiguousarray(a), dtype=torch.float64)
        return cls(
            theta_h=as_t(np.arccos(np.clip(dot(N, H), -1.0, 1.0))),
            cos_d=as_t(np.clip(dot(L, H), 0.0, 1.0)),
            cos_v=as_t(dot(N, V)),
            theta_l=as_t(np.arccos(np.clip(dot(N, L), -1.0, 1.0))),
            theta_v=as_t(np.arccos(np.clip(dot(N, V), -1.0, 1.0))),
            cos2_o=as_t(np.cos(2.0 * phi_o)),
            sin2_o=as_t(np.sin(2.0 * phi_o)),
        )


def surface_stokes_torch(mu, ks, alpha, beta, geo: SurfaceGeometry, lambda_fn, E0: float = 1.0) -> torch.Tensor:
    """(P, 3) surface Stokes for unpolarized incident light, differentiable in the parameters.

    ``lambda_fn(theta, alpha, beta)`` supplies Smith's Lambda.
    """
    D = ndf_torch(geo.theta_h, alpha, beta)
    g1_l = 1.0 / (1.0 + lambda_fn(geo.theta_l, alpha, beta))
    g1_v = 1.0 / (1.0 + lambda_fn(geo.theta_v, alpha, beta))
    scale = ks * D * (g1_l * g1_v) / (4.0 * torch.clamp(geo.cos_v, min=GRAZING_FLOOR))
    rs, rp = fresnel_from_cos(mu, geo.cos_d)
    r_plus = 0.5 * (rs + rp)
    r_minus = 0.5 * (rs - rp)
    s0 = scale * (r_plus * E0)
    linear = scale * (r_minus * E0)
    return torch.stack([s0, linear * geo.cos2_o, linear * geo.sin2_o], dim=-1)
