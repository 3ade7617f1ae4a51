# File: microgeometry/quadrature.py

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Tuple

import numpy as np

from utils.errors import QuadratureError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
_TANGENT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class HemisphereRule:
    """Product rule on the upper hemisphere of +Z.

    Gauss-Legendre in cos(theta) times midpoint nodes in phi; nodes are
    ordered theta-major.
    """

    n_theta: int
    n_phi: int
    directions: np.ndarray
    weights: np.ndarray
    cos_theta: np.ndarray
    phi: np.ndarray

    @property
    def size(self) -> int:
        return self.weights.size

    def oriented(self, basis: np.ndarray) -> np.ndarray:
        """Node directions in world space for a basis with rows (t1, t2, N)."""
        return self.directions @ basis


@lru_cache(maxsize=16)
def build_rule(n_theta: int, n_phi: int) -> HemisphereRule:
    if n_theta < 2 or n_phi < 4:
        raise QuadratureError(f"rule needs n_theta >= 2 and n_phi >= 4, got ({n_theta}, {n_phi})")
    x, w = np.polynomial.legendre.leggauss(n_theta)
    cos_t = 0.5 * (x + 1.0)
    w_cos = 0.5 * w
    phi = (np.arange(n_phi) + 0.5) * (TWO_PI / n_phi)

    cos_grid = np.repeat(cos_t, n_phi)
    phi_grid = np.tile(phi, n_theta)
    sin_grid = np.sqrt(np.clip(1.0 - cos_grid * cos_grid, 0.0, 1.0))
    directions = np.stack([sin_grid * np.cos(phi_grid), sin_grid * np.sin(phi_grid), cos_grid], axis=-1)
    weights = np.repeat(w_cos, n_phi) * (TWO_PI / n_phi)

    for array in (directions, weights, cos_grid, phi_grid):
        array.flags.writeable = False
    logger.debug(f"Built hemisphere rule {n_theta}x{n_phi} ({weights.size} nodes)")
    return HemisphereRule(n_theta, n_phi, directions, weights, cos_grid, phi_grid)


def local_basis(N: np.ndarray, L: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Per-configuration rows (t1, t2, N) for orienting a rule about N.

    t1 follows the component of L + V orthogonal to N, so swapping L and V
    keeps the node set. Fallbacks: L - V, then global +X, then global +Y.
    """
    N, L, V = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (N, L, V)))
    t1 = np.zeros_like(N)
    norm = np.zeros(N.shape[:-1])
    for candidate in (L + V, L - V, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])):
        candidate = np.broadcast_to(candidate, N.shape)
        projected = candidate - np.sum(candidate * N, axis=-1, keepdims=True) * N
        cand_norm = np.linalg.norm(projected, axis=-1)
        use = (norm < _TANGENT_TOLERANCE) & (cand_norm >= _TANGENT_TOLERANCE)
        t1 = np.where(use[..., None], projected, t1)
        norm = np.where(use, cand_norm, norm)
    t1 = t1 / norm[..., None]
    t2 = np.cross(N, t1)
    return np.stack([t1, t2, N], axis=-2)


def integrate(rule: HemisphereRule, integrand: Callable[[np.ndarray], np.ndarray], basis: Optional[np.ndarray] = None):
    """Weighted node sum of ``integrand`` evaluated on (n, 3) directions.

    The integrand may return shape (n,) or (n, k); without a basis the rule
    stays about +Z.
    """
    directions = rule.directions if basis is None else rule.oriented(basis)
    values = np.asarray(integrand(directions), dtype=float)
    if values.shape[0] != rule.size:
        raise QuadratureError(f"integrand returned {values.shape[0]} values for {rule.size} nodes")
    if not np.all(np.isfinite(values)):
        raise QuadratureError("non-finite integrand")
    total = np.tensordot(rule.weights, values, axes=(0, 0))
    return float(total) if np.ndim(total) == 0 else total


def sample_hemisphere(n_samples: int, rng: np.random.Generator) -> np.ndarray:
    cos_t = rng.random(n_samples)
    phi = rng.uniform(0.0, TWO_PI, n_samples)
    sin_t = np.sqrt(1.0 - cos_t * cos_t)
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)


def mc_estimate(integrand: Callable[[np.ndarray], np.ndarray], n_samples: int, seed: int) -> Tuple[float, float]:
    """Uniform-hemisphere Monte-Carlo estimate, returns (mean, standard error)."""
    if n_samples < 1:
        raise QuadratureError(f"n_samples must be >= 1, got {n_samples}")
    rng = np.random.default_rng(seed)
    values = TWO_PI * np.asarray(integrand(sample_hemisphere(n_samples, rng)), dtype=float)
    mean = float(values.mean())
    if n_samples == 1:
        return mean, 0.0
    return mean, float(values.std(ddof=1) / math.sqrt(n_samples))
