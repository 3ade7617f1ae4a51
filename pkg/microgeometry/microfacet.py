# File: microgeometry/microfacet.py

"""Microgeometry statistics shared by the surface and body terms.

* ``Ndf``: generalized normal distribution of facet normals,
  ``D(theta) = normC * exp(-(theta/alpha)**beta)`` on the upper hemisphere,
  normalized so that the cosine-weighted integral is one.
* ``SmithTable``: Smith's Lambda for that NDF, integrated numerically in
  slope space and interpolated with a monotone cubic.
* ``CorrelationFn``: von Mises-Fisher facet correlation
  ``f(n, ni) = c(theta_ni) * exp(kappa * n.ni)`` with ``c`` chosen so that
  ``integral f(n, ni) D(theta_n) dw_n = 1`` for every ``ni``.

Tables are built once and are read-only afterwards; the Smith table is built
lazily on first use under a lock.
"""

import logging
import math
import threading
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad, quad_vec
from scipy.interpolate import PchipInterpolator
from scipy.special import ive

from optics.geometry import Direction
from utils.errors import GeometryError, MicrofacetError
from utils.table_cache import load_table, store_table

logger = logging.getLogger(__name__)

HALF_PI = 0.5 * math.pi
TWO_PI = 2.0 * math.pi
MIRROR_ALPHA = 1e-4
DEFAULT_SMITH_NODES = 256
DEFAULT_CORRELATION_NODES = 128
TABLE_FORMAT = 1


def _shape_integral(alpha: float, beta: float, weight) -> float:
    """2*pi * integral over [0, pi/2] of exp(-(t/alpha)**beta) * weight(t) dt."""

    def integrand(t: float) -> float:
        return math.exp(-((t / alpha) ** beta)) * weight(t)

    points = [p for p in (alpha, 3.0 * alpha) if p < HALF_PI]
    value, _ = quad(integrand, 0.0, HALF_PI, points=points or None, limit=400, epsabs=1e-15, epsrel=1e-11)
    return TWO_PI * value


@dataclass(frozen=True)
class Ndf:
    alpha: float
    beta: float
    smith_nodes: int = DEFAULT_SMITH_NODES
    cache_dir: Optional[str] = field(default=None, compare=False)
    norm_c: float = field(init=False)
    hemisphere_integral: float = field(init=False)
    smith_table: "SmithTable" = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > MIRROR_ALPHA):
            raise MicrofacetError(f"alpha must exceed the ideal-mirror threshold {MIRROR_ALPHA}, got {self.alpha!r}")
        if not (math.isfinite(self.beta) and self.beta > 0.0):
            raise MicrofacetError(f"beta must be positive, got {self.beta!r}")
        cos_weighted = _shape_integral(self.alpha, self.beta, lambda t: math.cos(t) * math.sin(t))
        norm_c = 1.0 / cos_weighted
        object.__setattr__(self, "norm_c", norm_c)
        object.__setattr__(self, "hemisphere_integral", norm_c * _shape_integral(self.alpha, self.beta, math.sin))
        object.__setattr__(self, "smith_table", SmithTable(self, self.smith_nodes, self.cache_dir))

    def eval(self, theta):
        t = np.asarray(theta, dtype=float)
        value = self.norm_c * np.exp(-np.power(np.abs(t) / self.alpha, self.beta))
        return np.where(t < HALF_PI, value, 0.0)

    def log_eval(self, theta):
        t = np.asarray(theta, dtype=float)
        value = math.log(self.norm_c) - np.power(np.abs(t) / self.alpha, self.beta)
        return np.where(t < HALF_PI, value, -np.inf)

    def scalar(self, theta: float) -> float:
        if theta >= HALF_PI:
            return 0.0
        return self.norm_c * math.exp(-((abs(theta) / self.alpha) ** self.beta))


def ndf_eval(ndf: Ndf, theta_h):
    value = ndf.eval(theta_h)
    return float(value) if np.ndim(value) == 0 else value


def smith_lambda_direct(ndf: Ndf, theta_v: float) -> float:
    """Smith Lambda by adaptive quadrature over facet polar angle.

    With a = cot(theta_v) and slope density P22 = D cos^4,
    Lambda = (2/a) * int_{pi/2-theta_v}^{pi/2} D sin
             * [sqrt(sin^2 - a^2 cos^2) - a cos acos(a cos / sin)] dtheta.
    """
    if theta_v >= HALF_PI:
        raise MicrofacetError("grazing masking undefined")
    if theta_v < 1e-8:
        return 0.0
    a = 1.0 / math.tan(theta_v)
    lower = HALF_PI - theta_v

    def integrand(t: float) -> float:
        s = math.sin(t)
        c = math.cos(t)
        root = math.sqrt(max(s * s - a * a * c * c, 0.0))
        ratio = min(1.0, a * c / s)
        return ndf.scalar(t) * s * (root - a * c * math.acos(ratio))

    points = [p for p in (lower + ndf.alpha, lower + 3.0 * ndf.alpha) if p < HALF_PI]
    value, _ = quad(integrand, lower, HALF_PI, points=points or None, limit=400, epsabs=1e-15, epsrel=1e-10)
    return max(0.0, 2.0 * value / a)


def smith_lambda_monte_carlo(ndf: Ndf, theta_v: float, n_samples: int = 1_000_000, seed: int = 0) -> Tuple[float, float]:
    """Monte-Carlo estimate of Lambda from slopes drawn out of the NDF.

    Returns (mean, standard error).
    """
    a = 1.0 / math.tan(theta_v)
    grid = np.linspace(0.0, HALF_PI, 20001)
    pdf = TWO_PI * ndf.eval(grid) * np.cos(grid) * np.sin(grid)
    cdf = cumulative_trapezoid(pdf, grid, initial=0.0)
    cdf /= cdf[-1]
    rng = np.random.default_rng(seed)
    theta = np.interp(rng.random(n_samples), cdf, grid)
    psi = rng.uniform(0.0, TWO_PI, n_samples)
    slope = np.tan(theta) * np.cos(psi)
    samples = np.maximum(slope - a, 0.0) / a
    return float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(n_samples))


class SmithTable:
    """Lambda(theta_v) on ``nodes`` points of [0, pi/2), PCHIP-interpolated."""

    def __init__(self, ndf: Ndf, nodes: int = DEFAULT_SMITH_NODES, cache_dir: Optional[str] = None):
        if nodes < 4:
            raise MicrofacetError(f"Smith table needs at least 4 nodes, got {nodes}")
        self.ndf = ndf
        self.nodes = nodes
        self.cache_dir = cache_dir
        self.theta = np.arange(nodes) * (HALF_PI / nodes)
        self.values: Optional[np.ndarray] = None
        self._interp: Optional[PchipInterpolator] = None
        self._lock = threading.Lock()

    def _header(self) -> dict:
        return {
            "kind": "smith",
            "format": TABLE_FORMAT,
            "alpha": self.ndf.alpha,
            "beta": self.ndf.beta,
            "kappa": None,
            "resolution": self.nodes,
            "shape": [self.nodes],
        }

    def build(self) -> None:
        with self._lock:
            if self._interp is not None:
                return
            header = self._header()
            values = load_table(self.cache_dir, header)
            if values is None:
                logger.debug(f"Building Smith table alpha={self.ndf.alpha:.4g} beta={self.ndf.beta:.4g} nodes={self.nodes}")
                values = np.array([smith_lambda_direct(self.ndf, t) for t in self.theta])
                # quadrature noise near Lambda = 0 must not break monotonicity
                values = np.maximum.accumulate(values)
                store_table(self.cache_dir, header, values)
            self.values = values
            self._interp = PchipInterpolator(self.theta, values, extrapolate=False)

    def __call__(self, theta_v):
        t = np.asarray(theta_v, dtype=float)
        if np.any(t >= HALF_PI) or not np.all(np.isfinite(t)):
            raise MicrofacetError("grazing masking undefined")
        if np.any(t < -1e-9):
            raise MicrofacetError("viewing angle must be non-negative")
        self.build()
        flat = np.clip(np.atleast_1d(t), 0.0, None).reshape(-1)
        out = np.empty_like(flat)
        inside = flat <= self.theta[-1]
        out[inside] = self._interp(flat[inside])
        for k in np.flatnonzero(~inside):
            out[k] = smith_lambda_direct(self.ndf, float(flat[k]))
        out = np.maximum(out, 0.0).reshape(t.shape)
        return float(out) if out.ndim == 0 else out


def smith_lambda(ndf: Ndf, theta_v):
    return ndf.smith_table(theta_v)


def smith_g1(ndf: Ndf, v: Direction, N: Direction, facet_n: Direction) -> float:
    cos_v = v.dot(N)
    if cos_v <= 0.0:
        raise GeometryError("below-horizon direction")
    if v.dot(facet_n) <= 0.0:
        return 0.0
    return 1.0 / (1.0 + smith_lambda(ndf, math.acos(min(1.0, cos_v))))


def masking_shadowing(ndf: Ndf, L: Direction, V: Direction, N: Direction, H: Direction) -> float:
    return smith_g1(ndf, L, N, H) * smith_g1(ndf, V, N, H)


def smith_g1_from_cos(ndf: Ndf, cos_v):
    """1 / (1 + Lambda) for global cosines, without the facet visibility indicator."""
    theta = np.arccos(np.clip(np.asarray(cos_v, dtype=float), 0.0, 1.0))
    return 1.0 / (1.0 + np.asarray(smith_lambda(ndf, theta)))


def correlation_log_normalization(ndf: Ndf, kappa: float, theta_ni) -> np.ndarray:
    """log Z(theta_ni), Z = integral exp(kappa (n.ni - 1)) D(theta_n) dw_n.

    The azimuthal integral is done in closed form with the scaled Bessel
    function, leaving one adaptive integral over theta_n per node.
    """
    theta_ni = np.atleast_1d(np.asarray(theta_ni, dtype=float))
    if kappa == 0.0:
        return np.full(theta_ni.shape, math.log(ndf.hemisphere_integral))
    sin_i = np.sin(theta_ni)

    def log_integrand(t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)[..., None]
        with np.errstate(divide="ignore"):
            return (
                kappa * (np.cos(t - theta_ni) - 1.0)
                + np.log(ive(0, kappa * np.sin(t) * sin_i))
                + ndf.log_eval(t)
                + np.log(np.sin(t))
            )

    grid = np.linspace(0.0, HALF_PI, 1025)
    peak = np.max(log_integrand(grid), axis=0)

    def scaled(t: float) -> np.ndarray:
        return np.exp(log_integrand(t) - peak)

    breaks = sorted({float(p) for p in np.concatenate([theta_ni, [ndf.alpha]]) if 0.0 < p < HALF_PI})
    value, _ = quad_vec(scaled, 0.0, HALF_PI, epsabs=1e-14, epsrel=1e-11, norm="max", points=breaks or None)
    return math.log(TWO_PI) + peak + np.log(value)


@dataclass(frozen=True)
class CorrelationFn:
    kappa: float
    ndf: Ndf
    nodes: int = DEFAULT_CORRELATION_NODES
    cache_dir: Optional[str] = field(default=None, compare=False)
    theta_nodes: np.ndarray = field(init=False, repr=False, compare=False)
    log_norm: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (math.isfinite(self.kappa) and self.kappa >= 0.0):
            raise MicrofacetError(f"kappa must be non-negative, got {self.kappa!r}")
        if self.nodes < 2:
            raise MicrofacetError(f"correlation table needs at least 2 nodes, got {self.nodes}")
        theta = np.linspace(0.0, HALF_PI, self.nodes)
        header = {
            "kind": "correlation",
            "format": TABLE_FORMAT,
            "alpha": self.ndf.alpha,
            "beta": self.ndf.beta,
            "kappa": self.kappa,
            "resolution": self.nodes,
            "shape": [self.nodes],
        }
        log_norm = load_table(self.cache_dir, header)
        if log_norm is None:
            logger.debug(f"Building correlation table kappa={self.kappa:.4g} alpha={self.ndf.alpha:.4g} beta={self.ndf.beta:.4g}")
            log_norm = correlation_log_normalization(self.ndf, self.kappa, theta)
            store_table(self.cache_dir, header, log_norm)
        object.__setattr__(self, "theta_nodes", theta)
        object.__setattr__(self, "log_norm", log_norm)

    def log_normalization(self, theta_ni):
        """log Z at theta_ni, linear in log space between table nodes."""
        return np.interp(np.asarray(theta_ni, dtype=float), self.theta_nodes, self.log_norm)

    def log_kernel(self, cos_between, theta_ni):
        """log f for facet pairs with n.ni = cos_between."""
        return self.kappa * (np.asarray(cos_between) - 1.0) - self.log_normalization(theta_ni)


def corr_eval(f: CorrelationFn, n: Direction, ni: Direction, ndf: Ndf, N: Optional[Direction] = None) -> float:
    """f(n, ni); directions are measured against N (default +Z)."""
    N = N or Direction(0.0, 0.0, 1.0)
    if n.dot(N) < 0.0 or ni.dot(N) < 0.0:
        raise GeometryError("below-horizon direction")
    if ndf != f.ndf:
        raise MicrofacetError("correlation function was built for a different NDF")
    theta_ni = math.acos(min(1.0, ni.dot(N)))
    return float(np.exp(f.log_kernel(n.dot(ni), theta_ni)))


@dataclass(frozen=True)
class Microgeometry:
    ndf: Ndf
    correlation: CorrelationFn

    @property
    def alpha(self) -> float:
        return self.ndf.alpha

    @property
    def beta(self) -> float:
        return self.ndf.beta

    @property
    def kappa(self) -> float:
        return self.correlation.kappa


@lru_cache(maxsize=64)
def get_ndf(alpha: float, beta: float, smith_nodes: int = DEFAULT_SMITH_NODES, cache_dir: Optional[str] = None) -> Ndf:
    return Ndf(float(alpha), float(beta), smith_nodes=smith_nodes, cache_dir=cache_dir)


@lru_cache(maxsize=32)
def get_microgeometry(
    alpha: float,
    beta: float,
    kappa: float,
    smith_nodes: int = DEFAULT_SMITH_NODES,
    correlation_nodes: int = DEFAULT_CORRELATION_NODES,
    cache_dir: Optional[str] = None,
) -> Microgeometry:
    ndf = get_ndf(alpha, beta, smith_nodes=smith_nodes, cache_dir=cache_dir)
    correlation = CorrelationFn(float(kappa), ndf, nodes=correlation_nodes, cache_dir=cache_dir)
    return Microgeometry(ndf=ndf, correlation=correlation)
