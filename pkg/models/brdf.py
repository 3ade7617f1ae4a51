# File: models/brdf.py

"""Fresnel microfacet BRDF: radiometric and polarimetric surface and body terms.

The body term is the nested double-hemisphere integral over outgoing facets n
and incident facets ni. Both hemispheres share one quadrature rule oriented
about the pixel normal, so the correlation matrix f(n_k, n_j) depends only on
the rule and the parameters and is computed once per model. Per pixel the
inner integral reduces to one matrix-vector product.
"""

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from microgeometry.microfacet import (
    DEFAULT_CORRELATION_NODES,
    DEFAULT_SMITH_NODES,
    MIRROR_ALPHA,
    get_microgeometry,
    get_ndf,
    smith_lambda_direct,
)
from microgeometry.quadrature import HemisphereRule, build_rule, local_basis
from optics.fresnel import fresnel_from_cos, transmittance_from_cos
from optics.geometry import Direction, PolarizationFrame, ShadingGeometry, dot, frame_angles, frame_axes, normalize
from optics.polarization import StokesVector, rotate_stokes_array
from utils.errors import EvaluationError, GeometryError, ParameterError

logger = logging.getLogger(__name__)

GRAZING_FLOOR = 1e-6
MIRROR_HALF_ANGLE = 1e-6
DEFAULT_RULE = (32, 64)
DEFAULT_CHUNK = 256
NORMALIZATIONS = ("table", "discrete")
SMITH_MODES = ("table", "direct")
_DENSE_LIMIT = 4096
_BLOCK_ROWS = 512


@dataclass(frozen=True)
class FmbrdfParams:
    mu: float
    ks: float
    rk: float
    alpha: float
    beta: float
    kappa: float

    NAMES = ("mu", "ks", "rk", "alpha", "beta", "kappa")

    def __post_init__(self):
        values = self.as_array()
        if not np.all(np.isfinite(values)):
            raise ParameterError(f"parameters must be finite: {self}")
        if self.mu < 1.0:
            raise ParameterError(f"mu must be >= 1, got {self.mu}")
        if self.ks < 0.0 or self.rk < 0.0:
            raise ParameterError(f"albedos must be >= 0, got ks={self.ks}, rk={self.rk}")
        if self.alpha <= 0.0 or self.beta <= 0.0:
            raise ParameterError(f"alpha and beta must be positive, got alpha={self.alpha}, beta={self.beta}")
        if self.kappa < 0.0:
            raise ParameterError(f"kappa must be >= 0, got {self.kappa}")

    @property
    def kb(self) -> float:
        return self.ks * self.rk

    def as_array(self) -> np.ndarray:
        return np.array([self.mu, self.ks, self.rk, self.alpha, self.beta, self.kappa], dtype=float)

    @classmethod
    def from_array(cls, values) -> "FmbrdfParams":
        v = [float(x) for x in np.asarray(values, dtype=float).reshape(6)]
        return cls(*v)

    def as_dict(self) -> dict:
        return {name: float(getattr(self, name)) for name in self.NAMES}

    def with_values(self, **changes) -> "FmbrdfParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class LightSource:
    L: Direction
    E0: float = 1.0
    stokes_in: Optional[StokesVector] = field(default=None)

    def __post_init__(self):
        if not (math.isfinite(self.E0) and self.E0 >= 0.0):
            raise ParameterError(f"irradiance must be >= 0, got {self.E0}")
        if self.stokes_in is None:
            object.__setattr__(self, "stokes_in", StokesVector.unpolarized(self.E0))
        elif not self.stokes_in.is_realizable():
            raise ParameterError("incident Stokes vector is not realizable")

    @property
    def is_unpolarized(self) -> bool:
        return self.stokes_in.s1 == 0.0 and self.stokes_in.s2 == 0.0


def _rows(v) -> np.ndarray:
    return np.atleast_2d(np.asarray(v, dtype=float))


def flat_diffuse_stokes(mu: float, kd: float, N, L, V, s_in) -> np.ndarray:
    """Depolarizing diffuse term through a flat interface at the global normal.

    C(phi_o) T(theta_o) Dp(kd/pi) T(theta_i) C(phi_i) s_in * cos(theta_i).
    """
    N, L, V = _rows(N), _rows(L), _rows(V)
    s_in = np.broadcast_to(np.asarray(s_in, dtype=float), (N.shape[0], 4))
    cos_l = np.clip(dot(N, L), 0.0, 1.0)
    cos_v = np.clip(dot(N, V), 0.0, 1.0)
    tp_i, tm_i = transmittance_from_cos(mu, cos_l)
    tp_o, tm_o = transmittance_from_cos(mu, cos_v)
    xi, yi = frame_axes(N, L)
    xo, yo = frame_axes(N, -V)
    phi_i = frame_angles(xi, yi, N)
    phi_o = frame_angles(xo, yo, N)
    inner = tp_i * s_in[:, 0] + tm_i * (np.cos(2.0 * phi_i) * s_in[:, 1] - np.sin(2.0 * phi_i) * s_in[:, 2])
    scalar = (kd / math.pi) * inner * cos_l
    out = np.zeros((N.shape[0], 4))
    out[:, 0] = scalar * tp_o
    out[:, 1] = scalar * tm_o * np.cos(2.0 * phi_o)
    out[:, 2] = scalar * tm_o * np.sin(2.0 * phi_o)
    return out


class FmbrdfModel:
    """Batched evaluator for one parameter set and one quadrature rule."""

    def __init__(
        self,
        params: FmbrdfParams,
        rule: Optional[HemisphereRule] = None,
        *,
        normalization: str = "table",
        smith: str = "table",
        smith_nodes: int = DEFAULT_SMITH_NODES,
        correlation_nodes: int = DEFAULT_CORRELATION_NODES,
        cache_dir: Optional[str] = None,
        threads: int = 1,
        chunk_size: int = DEFAULT_CHUNK,
    ):
        if normalization not in NORMALIZATIONS:
            raise ParameterError(f"unknown correlation normalization '{normalization}'")
        if smith not in SMITH_MODES:
            raise ParameterError(f"unknown Smith evaluation mode '{smith}'")
        self.params = params
        self.rule = rule or build_rule(*DEFAULT_RULE)
        self.normalization = normalization
        self.smith = smith
        self.threads = max(1, int(threads))
        self.chunk_size = max(1, int(chunk_size))
        self.mirror = params.alpha <= MIRROR_ALPHA
        self.ndf = None
        self.correlation = None
        if not self.mirror:
            if normalization == "table":
                micro = get_microgeometry(
                    params.alpha, params.beta, params.kappa,
                    smith_nodes=smith_nodes, correlation_nodes=correlation_nodes, cache_dir=cache_dir,
                )
                self.ndf, self.correlation = micro.ndf, micro.correlation
            else:
                self.ndf = get_ndf(params.alpha, params.beta, smith_nodes=smith_nodes, cache_dir=cache_dir)
        self._node_ndf: Optional[np.ndarray] = None
        self._log_norm: Optional[np.ndarray] = None
        self._correlation: Optional[np.ndarray] = None
        self._lock = threading.Lock()

    # -- correlation ---------------------------------------------------

    def _prepare(self) -> None:
        with self._lock:
            if self._log_norm is not None:
                return
            rule = self.rule
            theta = np.arccos(np.clip(rule.cos_theta, -1.0, 1.0))
            node_ndf = self.ndf.eval(theta)
            kappa = self.params.kappa
            if self.normalization == "table":
                log_norm = self.correlation.log_normalization(theta)
            else:
                # enforce the facet-correlation normalization on the rule itself
                log_norm = np.empty(rule.size)
                mass = node_ndf * rule.weights
                for start in range(0, rule.size, _BLOCK_ROWS):
                    cols = slice(start, start + _BLOCK_ROWS)
                    kernel = np.exp(kappa * (rule.directions @ rule.directions[cols].T - 1.0))
                    total = mass @ kernel
                    # a zero column carries zero facet mass itself
                    log_norm[cols] = np.where(total > 0.0, np.log(np.where(total > 0.0, total, 1.0)), 0.0)
            self._node_ndf = node_ndf
            self._log_norm = log_norm
            if rule.size <= _DENSE_LIMIT:
                self._correlation = np.exp(kappa * (rule.directions @ rule.directions.T - 1.0) - log_norm[None, :])
            logger.debug(f"Prepared body kernel: {rule.size} nodes, normalization={self.normalization}, kappa={kappa:.4g}")

    def _apply_correlation(self, inner: np.ndarray) -> np.ndarray:
        """S[p, k] = sum_j f(n_k, n_j) inner[p, j]."""
        if self._correlation is not None:
            return inner @ self._correlation.T
        dirs = self.rule.directions
        out = np.empty_like(inner)
        for start in range(0, dirs.shape[0], _BLOCK_ROWS):
            rows = slice(start, start + _BLOCK_ROWS)
            block = np.exp(self.params.kappa * (dirs[rows] @ dirs.T - 1.0) - self._log_norm[None, :])
            out[:, rows] = inner @ block.T
        return out

    def smith_lambda(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.smith == "table":
            return np.asarray(self.ndf.smith_table(theta), dtype=float)
        flat = [smith_lambda_direct(self.ndf, float(t)) for t in theta.reshape(-1)]
        return np.array(flat, dtype=float).reshape(theta.shape)

    def g1_from_cos(self, cos_v) -> np.ndarray:
        return 1.0 / (1.0 + self.smith_lambda(np.arccos(np.clip(cos_v, 0.0, 1.0))))

    # -- chunking ------------------------------------------------------

    def _map_chunks(self, fn, N, L, V, s_in) -> np.ndarray:
        count = N.shape[0]
        starts = list(range(0, count, self.chunk_size))
        jobs = [slice(s, s + self.chunk_size) for s in starts]

        def run(sl):
            return fn(N[sl], L[sl], V[sl], s_in[sl])

        if self.threads == 1 or len(jobs) == 1:
            parts = [run(sl) for sl in jobs]
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                parts = list(pool.map(run, jobs))
        return np.concatenate(parts, axis=0) if parts else np.zeros((0, 4))

    @staticmethod
    def _broadcast(N, L, V, s_in) -> Tuple[np.ndarray, ...]:
        N, L, V = _rows(N), _rows(L), _rows(V)
        count = max(N.shape[0], L.shape[0], V.shape[0])
        N, L, V = (np.broadcast_to(a, (count, 3)) for a in (N, L, V))
        s_in = np.broadcast_to(np.asarray(s_in, dtype=float).reshape(-1, 4), (count, 4))
        return N, L, V, s_in

    # -- surface -------------------------------------------------------

    def _surface_terms(self, N, L, V):
        p = self.params
        H = L + V
        h_norm = np.linalg.norm(H, axis=-1)
        if np.any(h_norm < 1e-12):
            raise GeometryError("antipodal directions")
        H = H / h_norm[:, None]
        cos_v = dot(N, V)
        cos_d = np.clip(dot(L, H), 0.0, 1.0)
        theta_h = np.arccos(np.clip(dot(N, H), -1.0, 1.0))
        rs, rp = fresnel_from_cos(p.mu, cos_d)
        if self.mirror:
            scale = np.where(theta_h < MIRROR_HALF_ANGLE, p.ks, 0.0)
        else:
            D = self.ndf.eval(theta_h)
            g1_l = self.g1_from_cos(dot(N, L))
            g1_v = self.g1_from_cos(cos_v)
            scale = p.ks * D * (g1_l * g1_v) / (4.0 * np.maximum(cos_v, GRAZING_FLOOR))
        return H, cos_d, rs, rp, scale

    def surface_radiance_batch(self, N, L, V, E0) -> np.ndarray:
        N, L, V, _ = self._broadcast(N, L, V, np.zeros(4))
        _, _, rs, rp, scale = self._surface_terms(N, L, V)
        r_plus = 0.5 * (rs + rp)
        return scale * (r_plus * np.asarray(E0, dtype=float))

    def surface_stokes_batch(self, N, L, V, s_in) -> np.ndarray:
        N, L, V, s_in = self._broadcast(N, L, V, s_in)
        H, cos_d, rs, rp, scale = self._surface_terms(N, L, V)
        mu = self.params.mu
        r_plus = 0.5 * (rs + rp)
        r_minus = 0.5 * (rs - rp)
        cos_delta = np.where(np.arccos(cos_d) < math.atan(mu), -1.0, 1.0)
        r_cross = np.sqrt(rs * rp) * cos_delta

        xi, yi = frame_axes(N, L)
        xo, yo = frame_axes(N, -V)
        phi_i = frame_angles(xi, yi, H)
        phi_o = frame_angles(xo, yo, H)

        rotated = rotate_stokes_array(s_in, -phi_i)
        reflected = np.empty_like(rotated)
        reflected[:, 0] = r_plus * rotated[:, 0] + r_minus * rotated[:, 1]
        reflected[:, 1] = r_minus * rotated[:, 0] + r_plus * rotated[:, 1]
        reflected[:, 2] = r_cross * rotated[:, 2]
        reflected[:, 3] = r_cross * rotated[:, 3]
        return rotate_stokes_array(reflected, phi_o) * scale[:, None]

    # -- body ----------------------------------------------------------

    def _body_chunk(self, N, L, V, s_in) -> np.ndarray:
        p = self.params
        rule = self.rule
        nodes = rule.directions
        basis = local_basis(N, L, V)
        to_local = lambda w: np.einsum("pij,pj->pi", basis, w)
        L_loc = to_local(L)
        V_loc = to_local(V)

        cos_vn = V_loc @ nodes.T
        cos_ln = L_loc @ nodes.T
        g1_v = self.g1_from_cos(V_loc[:, 2])
        g1_l = self.g1_from_cos(L_loc[:, 2])
        mass = self._node_ndf * rule.weights
        outer = np.where(cos_vn > 0.0, g1_v[:, None] * mass[None, :] * cos_vn, 0.0)
        inner = np.where(cos_ln > 0.0, g1_l[:, None] * mass[None, :] * cos_ln, 0.0)

        tp_o, tm_o = transmittance_from_cos(p.mu, np.clip(cos_vn, 0.0, 1.0))
        tp_i, tm_i = transmittance_from_cos(p.mu, np.clip(cos_ln, 0.0, 1.0))

        xi, yi = frame_axes(N, L)
        xo, yo = frame_axes(N, -V)
        phi_i = frame_angles(to_local(xi)[:, None, :], to_local(yi)[:, None, :], nodes[None, :, :])
        phi_o = frame_angles(to_local(xo)[:, None, :], to_local(yo)[:, None, :], nodes[None, :, :])

        s0 = s_in[:, 0:1]
        s1 = s_in[:, 1:2]
        s2 = s_in[:, 2:3]
        transmitted = inner * (tp_i * s0 + tm_i * (np.cos(2.0 * phi_i) * s1 - np.sin(2.0 * phi_i) * s2))
        scattered = (p.kb / math.pi) * self._apply_correlation(transmitted)

        weight = outer * scattered
        inv_nv = 1.0 / np.maximum(V_loc[:, 2], GRAZING_FLOOR)
        out = np.zeros((N.shape[0], 4))
        out[:, 0] = np.sum(weight * tp_o, axis=1) * inv_nv
        out[:, 1] = np.sum(weight * tm_o * np.cos(2.0 * phi_o), axis=1) * inv_nv
        out[:, 2] = np.sum(weight * tm_o * np.sin(2.0 * phi_o), axis=1) * inv_nv
        return out

    def body_stokes_batch(self, N, L, V, s_in) -> np.ndarray:
        N, L, V, s_in = self._broadcast(N, L, V, s_in)
        if self.mirror:
            return flat_diffuse_stokes(self.params.mu, self.params.kb, N, L, V, s_in)
        self._prepare()
        return self._map_chunks(self._body_chunk, N, L, V, s_in)

    def total_stokes_batch(self, N, L, V, s_in) -> np.ndarray:
        return self.surface_stokes_batch(N, L, V, s_in) + self.body_stokes_batch(N, L, V, s_in)


@lru_cache(maxsize=8)
def get_model(
    params: FmbrdfParams,
    n_theta: int = DEFAULT_RULE[0],
    n_phi: int = DEFAULT_RULE[1],
    normalization: str = "table",
    smith: str = "table",
    smith_nodes: int = DEFAULT_SMITH_NODES,
    correlation_nodes: int = DEFAULT_CORRELATION_NODES,
    cache_dir: Optional[str] = None,
    threads: int = 1,
) -> FmbrdfModel:
    return FmbrdfModel(
        params, build_rule(n_theta, n_phi), normalization=normalization, smith=smith,
        smith_nodes=smith_nodes, correlation_nodes=correlation_nodes, cache_dir=cache_dir, threads=threads,
    )


def _model_for(p: FmbrdfParams, rule: Optional[HemisphereRule], normalization: str = "table") -> FmbrdfModel:
    rule = rule or build_rule(*DEFAULT_RULE)
    return get_model(p, rule.n_theta, rule.n_phi, normalization)


def _require_upper(N: Direction, L: Direction, V: Direction) -> None:
    if N.dot(L) <= 0.0 or N.dot(V) <= 0.0:
        raise GeometryError("below-horizon direction")


def _check_frames(frames, N: Direction, L: Direction, V: Direction) -> None:
    if frames is None:
        return
    incident, outgoing = frames
    if not (np.allclose(incident.z_axis.as_array(), L.as_array()) and np.allclose(outgoing.z_axis.as_array(), -V.as_array())):
        raise GeometryError("polarization frames do not match the light and view directions")


def surface_radiance(p: FmbrdfParams, geom: ShadingGeometry, E0: float, rule: Optional[HemisphereRule] = None) -> float:
    _require_upper(geom.N, geom.L, geom.V)
    model = _model_for(p, rule)
    return float(model.surface_radiance_batch(geom.N.as_array(), geom.L.as_array(), geom.V.as_array(), E0)[0])


def surface_stokes(
    p: FmbrdfParams,
    geom: ShadingGeometry,
    frames: Optional[Tuple[PolarizationFrame, PolarizationFrame]] = None,
    stokes_in: Optional[StokesVector] = None,
    rule: Optional[HemisphereRule] = None,
) -> StokesVector:
    _require_upper(geom.N, geom.L, geom.V)
    _check_frames(frames, geom.N, geom.L, geom.V)
    s_in = (stokes_in or StokesVector.unpolarized(1.0)).as_array()
    model = _model_for(p, rule)
    out = model.surface_stokes_batch(geom.N.as_array(), geom.L.as_array(), geom.V.as_array(), s_in)
    return StokesVector.from_array(out[0])


def body_radiance(
    p: FmbrdfParams, N: Direction, L: Direction, V: Direction, E0: float,
    rule: Optional[HemisphereRule] = None, normalization: str = "table",
) -> float:
    _require_upper(N, L, V)
    model = _model_for(p, rule, normalization)
    s_in = StokesVector.unpolarized(E0).as_array()
    return float(model.body_stokes_batch(N.as_array(), L.as_array(), V.as_array(), s_in)[0, 0])


def body_stokes(
    p: FmbrdfParams, N: Direction, L: Direction, V: Direction,
    frames: Optional[Tuple[PolarizationFrame, PolarizationFrame]] = None,
    stokes_in: Optional[StokesVector] = None,
    rule: Optional[HemisphereRule] = None,
    normalization: str = "table",
) -> StokesVector:
    _require_upper(N, L, V)
    _check_frames(frames, N, L, V)
    s_in = (stokes_in or StokesVector.unpolarized(1.0)).as_array()
    model = _model_for(p, rule, normalization)
    return StokesVector.from_array(model.body_stokes_batch(N.as_array(), L.as_array(), V.as_array(), s_in)[0])


def eval_total(
    p: FmbrdfParams, N: Direction, V: Direction, light: LightSource,
    mode: str = "oracle", rule: Optional[HemisphereRule] = None, surrogate=None,
) -> Tuple[float, StokesVector]:
    """Surface plus body reflection for one configuration, (radiance, Stokes)."""
    L = light.L
    _require_upper(N, L, V)
    if mode == "oracle":
        model = _model_for(p, rule)
        out = model.total_stokes_batch(N.as_array(), L.as_array(), V.as_array(), light.stokes_in.as_array())[0]
    elif mode == "surrogate":
        if surrogate is None:
            raise EvaluationError("surrogate mode requires a loaded surrogate model")
        if not light.is_unpolarized:
            raise EvaluationError("surrogate mode supports unpolarized light only")
        out = surrogate.total_stokes(p, N.as_array()[None], L.as_array()[None], V.as_array()[None], light.E0)[0]
    else:
        raise EvaluationError(f"unknown evaluation mode '{mode}'")
    if not np.all(np.isfinite(out)):
        raise EvaluationError("evaluation failure at pixel", pixel=0)
    stokes = StokesVector.from_array(out)
    return stokes.s0, stokes


def body_albedo(
    p: FmbrdfParams, N: Direction, L: Direction,
    rule: Optional[HemisphereRule] = None, view_rule: Optional[HemisphereRule] = None,
    normalization: str = "table",
) -> float:
    """Directional-hemispherical albedo of the body term for unit irradiance."""
    if N.dot(L) <= 0.0:
        raise GeometryError("below-horizon direction")
    model = _model_for(p, rule, normalization)
    view_rule = view_rule or build_rule(8, 16)
    basis = local_basis(N.as_array(), L.as_array(), L.as_array())
    views = normalize(view_rule.oriented(basis))
    cos_v = views @ N.as_array()
    keep = cos_v > GRAZING_FLOOR
    radiance = np.zeros(view_rule.size)
    stokes = model.body_stokes_batch(N.as_array(), L.as_array(), views[keep], StokesVector.unpolarized(1.0).as_array())
    radiance[keep] = stokes[:, 0]
    return float(np.sum(view_rule.weights * radiance * np.clip(cos_v, 0.0, 1.0)) / N.dot(L))
