# File: models/baselines.py

"""Reference reflectance models the FMBRDF is compared against."""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from microgeometry.microfacet import get_ndf
from microgeometry.quadrature import HemisphereRule, build_rule, local_basis
from models.brdf import FmbrdfModel, FmbrdfParams, flat_diffuse_stokes, get_model, surface_radiance, surface_stokes
from optics.fresnel import transmittance_from_cos
from optics.geometry import Direction, PolarizationFrame, ShadingGeometry, dot
from optics.polarization import StokesVector
from utils.errors import GeometryError, ParameterError

logger = logging.getLogger(__name__)

VARIANTS = ("lambertian", "oren_nayar", "torrance_sparrow", "lambertian_ts", "pbrdf_flat")
SINGLE_FACET_RULE = (128, 256)


@dataclass(frozen=True)
class BaselineParams:
    """Parameters of one baseline model; unused fields are ignored by the variant."""

    variant: str
    albedo: float = 0.5
    sigma: float = 0.3
    ks: float = 0.1
    mu: float = 1.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown baseline model '{self.variant}'")
        if self.albedo < 0.0 or self.ks < 0.0:
            raise ParameterError("albedos must be >= 0")
        if self.sigma < 0.0:
            raise ParameterError(f"sigma must be >= 0, got {self.sigma}")
        if self.mu < 1.0:
            raise ParameterError(f"mu must be >= 1, got {self.mu}")
        if self.variant in ("torrance_sparrow", "lambertian_ts", "pbrdf_flat") and self.sigma <= 0.0:
            raise ParameterError("microfacet baselines need sigma > 0")

    def specular_params(self) -> FmbrdfParams:
        """Torrance-Sparrow specular lobe as an FMBRDF surface term with a Gaussian NDF."""
        return FmbrdfParams(mu=self.mu, ks=self.ks, rk=0.0, alpha=self.sigma, beta=2.0, kappa=0.0)


def lambertian(albedo: float, N: Direction, L: Direction, E0: float) -> float:
    return albedo / math.pi * max(0.0, N.dot(L)) * E0


def _oren_nayar_batch(albedo: float, sigma: float, N, L, V, E0) -> np.ndarray:
    cos_l = np.clip(dot(N, L), 0.0, 1.0)
    cos_v = np.clip(dot(N, V), 0.0, 1.0)
    theta_i = np.arccos(cos_l)
    theta_o = np.arccos(cos_v)
    s2 = sigma * sigma
    a = 1.0 - 0.5 * s2 / (s2 + 0.33)
    b = 0.45 * s2 / (s2 + 0.09)

    l_t = L - cos_l[..., None] * N
    v_t = V - cos_v[..., None] * N
    norms = np.linalg.norm(l_t, axis=-1) * np.linalg.norm(v_t, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_dphi = np.where(norms > 1e-12, dot(l_t, v_t) / np.where(norms > 1e-12, norms, 1.0), 0.0)
    alpha = np.maximum(theta_i, theta_o)
    beta = np.minimum(theta_i, theta_o)
    shape = a + b * np.maximum(0.0, cos_dphi) * np.sin(alpha) * np.tan(beta)
    return albedo / math.pi * cos_l * shape * E0


def oren_nayar(albedo: float, sigma: float, N: Direction, L: Direction, V: Direction, E0: float) -> float:
    """First-order qualitative Oren-Nayar model (no interreflection term)."""
    if albedo < 0.0 or sigma < 0.0:
        raise ParameterError("albedo and sigma must be >= 0")
    if N.dot(L) <= 0.0:
        return 0.0
    value = _oren_nayar_batch(albedo, sigma, N.as_array(), L.as_array(), V.as_array(), E0)
    return float(value)


def torrance_sparrow(ks: float, sigma: float, mu: float, geom: ShadingGeometry, E0: float) -> float:
    params = BaselineParams("torrance_sparrow", ks=ks, sigma=sigma, mu=mu).specular_params()
    return surface_radiance(params, geom, E0)


def pbrdf_flat(
    params: BaselineParams,
    geom: ShadingGeometry,
    frames: Optional[Tuple[PolarizationFrame, PolarizationFrame]] = None,
    stokes_in: Optional[StokesVector] = None,
) -> StokesVector:
    """Flat-interface polarimetric diffuse term plus the microfacet specular Stokes term."""
    stokes_in = stokes_in or StokesVector.unpolarized(1.0)
    diffuse = flat_diffuse_stokes(
        params.mu, params.albedo, geom.N.as_array(), geom.L.as_array(), geom.V.as_array(), stokes_in.as_array()
    )[0]
    specular = surface_stokes(params.specular_params(), geom, frames, stokes_in)
    return StokesVector.from_array(diffuse) + specular


def baseline_stokes_batch(params: BaselineParams, N, L, V, s_in, threads: int = 1) -> np.ndarray:
    """(P, 4) Stokes outputs of a baseline for stacked configurations."""
    N, L, V, s_in = FmbrdfModel._broadcast(N, L, V, s_in)
    out = np.zeros((N.shape[0], 4))
    if params.variant == "lambertian":
        out[:, 0] = params.albedo / math.pi * np.clip(dot(N, L), 0.0, 1.0) * s_in[:, 0]
    elif params.variant == "oren_nayar":
        out[:, 0] = _oren_nayar_batch(params.albedo, params.sigma, N, L, V, s_in[:, 0])
    else:
        specular = get_model(params.specular_params(), threads=threads)
        if params.variant == "torrance_sparrow":
            out = specular.surface_stokes_batch(N, L, V, s_in)
        elif params.variant == "lambertian_ts":
            out = specular.surface_stokes_batch(N, L, V, s_in)
            out[:, 0] += params.albedo / math.pi * np.clip(dot(N, L), 0.0, 1.0) * s_in[:, 0]
        else:
            out = specular.surface_stokes_batch(N, L, V, s_in) + flat_diffuse_stokes(params.mu, params.albedo, N, L, V, s_in)
    return out


def single_facet_body(
    mu: float, kb: float, alpha: float, beta: float,
    N: Direction, L: Direction, V: Direction, E0: float,
    rule: Optional[HemisphereRule] = None,
) -> float:
    """Body radiance in the limit where light leaves through the facet it entered.

    The correlation kernel collapses to f = delta(n - ni) / D(n), leaving a
    single hemisphere integral over facet normals. Used as an independent
    oracle for the large-kappa limit.
    """
    if N.dot(L) <= 0.0 or N.dot(V) <= 0.0:
        raise GeometryError("below-horizon direction")
    rule = rule or build_rule(*SINGLE_FACET_RULE)
    ndf = get_ndf(alpha, beta)
    basis = local_basis(N.as_array(), L.as_array(), V.as_array())
    facets = rule.oriented(basis)
    cos_vn = facets @ V.as_array()
    cos_ln = facets @ L.as_array()
    theta_n = np.arccos(np.clip(rule.cos_theta, -1.0, 1.0))
    t_o, _ = transmittance_from_cos(mu, np.clip(cos_vn, 0.0, 1.0))
    t_i, _ = transmittance_from_cos(mu, np.clip(cos_ln, 0.0, 1.0))
    g1_v = 1.0 / (1.0 + ndf.smith_table(math.acos(min(1.0, N.dot(V)))))
    g1_l = 1.0 / (1.0 + ndf.smith_table(math.acos(min(1.0, N.dot(L)))))
    visible = (cos_vn > 0.0) & (cos_ln > 0.0)
    integrand = np.where(visible, ndf.eval(theta_n) * t_o * cos_vn * t_i * cos_ln, 0.0)
    total = float(np.sum(rule.weights * integrand))
    return (kb / math.pi) * g1_v * g1_l * total * E0 / max(N.dot(V), 1e-6)
