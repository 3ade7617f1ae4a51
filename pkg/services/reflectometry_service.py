# File: services/reflectometry_service.py

"""Reflectance parameter estimation from one polarimetric image.

The objective is the mean squared intensity residual plus the weighted mean
squared DoLP residual. Parameters are optimized by Adam in an unconstrained
space; evaluation runs either on the quadrature oracle (finite-difference
gradients) or on a trained surrogate (autograd gradients).
"""

import csv
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from models.brdf import FmbrdfParams, get_model
from optics.polarization import dolp_array
from surrogate.canonical import canonicalize
from surrogate.differentiable import SurfaceGeometry, surface_stokes_torch
from surrogate.networks import BODY_INPUTS
from utils.errors import ConfigError, EvaluationError, ParameterError

logger = logging.getLogger(__name__)

NAMES = FmbrdfParams.NAMES
MODES = ("oracle", "surrogate")
OUTLIER_RULES = ("mad", "polyfit")
LOSS_KINDS = ("squared", "huber")
DEFAULT_BOUNDS: Dict[str, Tuple[float, float]] = {
    "mu": (1.05, 3.0),
    "ks": (0.0, math.inf),
    "rk": (0.0, math.inf),
    "alpha": (0.01, 1.2),
    "beta": (0.6, 4.0),
    "kappa": (0.0, 100.0),
}
TRANSFORMS = {"mu": "logistic", "ks": "exp", "rk": "exp", "alpha": "logistic", "beta": "logistic", "kappa": "softplus"}
DEFAULT_INITIAL = FmbrdfParams(mu=1.5, ks=0.1, rk=1.0, alpha=0.3, beta=2.0, kappa=1.0)
FD_RELATIVE_STEP = 1e-4
DOLP_EPS = 1e-30
SOFTPLUS_FLOOR = 1e-12
INTERIOR_MARGIN = 1e-9


@dataclass
class Observation:
    """Masked pixels of one image: normals, observed intensity and DoLP, one light."""

    N: np.ndarray
    intensity: np.ndarray
    dolp: np.ndarray
    L: np.ndarray
    V: np.ndarray
    E0: float = 1.0
    pixels: Optional[np.ndarray] = None
    nv_threshold: float = 0.1

    def __post_init__(self):
        self.N = np.atleast_2d(np.asarray(self.N, dtype=float))
        self.intensity = np.asarray(self.intensity, dtype=float).reshape(-1)
        self.dolp = np.asarray(self.dolp, dtype=float).reshape(-1)
        self.L = np.asarray(self.L, dtype=float)
        self.V = np.asarray(self.V, dtype=float)
        count = self.N.shape[0]
        if self.intensity.shape[0] != count or self.dolp.shape[0] != count:
            raise ConfigError("observation arrays have mismatched lengths")
        if count == 0:
            raise EvaluationError("no valid pixels")
        if not (np.all(np.isfinite(self.intensity)) and np.all(np.isfinite(self.dolp)) and np.all(np.isfinite(self.N))):
            raise ConfigError("observation contains non-finite values")
        if np.any(self.N @ self.V <= self.nv_threshold - 1e-12):
            raise ConfigError(f"observation contains pixels with N.V <= {self.nv_threshold}")
        if self.pixels is None:
            self.pixels = np.arange(count)

    @classmethod
    def from_image(cls, img, nv_threshold: float = 0.1) -> "Observation":
        mask = img.mask & (img.normals @ img.V > nv_threshold)
        if not np.any(mask):
            raise EvaluationError("no valid pixels")
        stokes = img.stokes[mask]
        return cls(
            N=img.normals[mask], intensity=stokes[:, 0], dolp=dolp_array(stokes),
            L=img.L, V=img.V, E0=img.E0, pixels=np.flatnonzero(mask.reshape(-1)), nv_threshold=nv_threshold,
        )

    def subset(self, keep: np.ndarray) -> "Observation":
        keep = np.asarray(keep, dtype=bool)
        if not np.any(keep):
            raise EvaluationError("no valid pixels")
        return Observation(
            N=self.N[keep], intensity=self.intensity[keep], dolp=self.dolp[keep], L=self.L, V=self.V,
            E0=self.E0, pixels=self.pixels[keep], nv_threshold=self.nv_threshold,
        )

    @property
    def size(self) -> int:
        return self.N.shape[0]

    def theta_nv_deg(self) -> np.ndarray:
        return np.degrees(np.arccos(np.clip(self.N @ self.V, -1.0, 1.0)))


@dataclass(frozen=True)
class AdamSettings:
    step: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 2000


@dataclass(frozen=True)
class FitConfig:
    initial: FmbrdfParams = DEFAULT_INITIAL
    bounds: Dict[str, Tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    adam: AdamSettings = AdamSettings()
    mode: str = "oracle"
    outlier_rule: str = "mad"
    outlier_threshold: float = 0.05
    use_intensity: bool = True
    use_polarization: bool = True
    loss_kind: str = "squared"
    huber_delta: float = 0.1
    loss_tolerance: float = 1e-12
    rel_tolerance: float = 1e-9
    multi_start: int = 1
    seed: int = 0
    rule: Tuple[int, int] = (32, 64)
    normalization: str = "table"
    threads: int = 1

    def __post_init__(self):
        if self.adam.iterations < 1:
            raise ParameterError("iterations must be >= 1")
        if self.mode not in MODES:
            raise ParameterError(f"unknown evaluation mode '{self.mode}'")
        if self.outlier_rule not in OUTLIER_RULES:
            raise ParameterError(f"unknown outlier rule '{self.outlier_rule}'")
        if self.loss_kind not in LOSS_KINDS:
            raise ParameterError(f"unknown loss kind '{self.loss_kind}'")
        if not (self.use_intensity or self.use_polarization):
            raise ParameterError("at least one loss term must be enabled")
        if self.multi_start < 1:
            raise ParameterError("multi_start must be >= 1")
        for name in NAMES:
            lo, hi = self.bounds.get(name, DEFAULT_BOUNDS[name])
            if not lo < hi:
                raise ParameterError(f"inconsistent bounds for {name}: [{lo}, {hi}]")


@dataclass
class FitReport:
    params: FmbrdfParams
    initial_params: FmbrdfParams
    loss_trajectory: List[float]
    intensity_rms: float
    dolp_rms: float
    wall_time: float
    converged: bool
    stop_reason: str
    mode: str
    start_losses: List[float] = field(default_factory=list)
    best_start: int = 0
    novel_light_nrmse: Optional[float] = None
    excluded_pixels: int = 0

    @property
    def initial_loss(self) -> float:
        return self.loss_trajectory[0]

    @property
    def final_loss(self) -> float:
        return self.loss_trajectory[-1]

    def as_dict(self) -> Dict[str, object]:
        return {
            "params": self.params.as_dict(),
            "initial_params": self.initial_params.as_dict(),
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "iterations": len(self.loss_trajectory) - 1,
            "intensity_rms": self.intensity_rms,
            "dolp_rms": self.dolp_rms,
            "wall_time": self.wall_time,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "mode": self.mode,
            "start_losses": self.start_losses,
            "best_start": self.best_start,
            "novel_light_nrmse": self.novel_light_nrmse,
            "excluded_pixels": self.excluded_pixels,
        }

    def write(self, out_dir: str, name: str = "fit_report") -> List[str]:
        os.makedirs(out_dir, exist_ok=True)
        json_path = os.path.join(out_dir, f"{name}.json")
        csv_path = os.path.join(out_dir, f"{name}.loss.csv")
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(self.as_dict(), f, indent=2, sort_keys=True)
        with open(csv_path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["iteration", "loss"])
            for k, value in enumerate(self.loss_trajectory):
                writer.writerow([k, f"{value:.12g}"])
        return [json_path, csv_path]


# -- reparameterization ------------------------------------------------


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Reparameterization:
    """Bijection between bounded physical parameters and unconstrained Adam variables."""

    def __init__(self, bounds: Optional[Dict[str, Tuple[float, float]]] = None):
        merged = dict(DEFAULT_BOUNDS)
        merged.update(bounds or {})
        self.lo = np.array([merged[n][0] for n in NAMES], dtype=float)
        self.hi = np.array([merged[n][1] for n in NAMES], dtype=float)
        self.kinds = [TRANSFORMS[n] for n in NAMES]

    def clip_inside(self, values: np.ndarray) -> np.ndarray:
        out = np.array(values, dtype=float, copy=True)
        for i, kind in enumerate(self.kinds):
            lo, hi = self.lo[i], self.hi[i]
            if kind == "logistic":
                span = hi - lo
                out[i] = np.clip(out[i], lo + INTERIOR_MARGIN * span, hi - INTERIOR_MARGIN * span)
            elif kind == "exp":
                out[i] = max(out[i], SOFTPLUS_FLOOR)
            else:
                out[i] = np.clip(out[i], SOFTPLUS_FLOOR, hi)
        return out

    def to_unconstrained(self, params: FmbrdfParams) -> np.ndarray:
        p = self.clip_inside(params.as_array())
        z = np.empty_like(p)
        for i, kind in enumerate(self.kinds):
            if kind == "logistic":
                z[i] = math.log((p[i] - self.lo[i]) / (self.hi[i] - p[i]))
            elif kind == "exp":
                z[i] = math.log(p[i])
            else:
                y = max(p[i], SOFTPLUS_FLOOR)
                z[i] = y + math.log(-math.expm1(-y))
        return z

    def values(self, z: np.ndarray) -> np.ndarray:
        p = np.empty(len(NAMES))
        for i, kind in enumerate(self.kinds):
            if kind == "logistic":
                p[i] = self.lo[i] + (self.hi[i] - self.lo[i]) * _sigmoid(z[i])
            elif kind == "exp":
                p[i] = math.exp(z[i])
            else:
                p[i] = min(float(np.logaddexp(0.0, z[i])), self.hi[i])
        return p

    def to_params(self, z: np.ndarray) -> FmbrdfParams:
        return FmbrdfParams.from_array(self.values(z))

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        """Diagonal of d(params)/dz."""
        d = np.empty(len(NAMES))
        for i, kind in enumerate(self.kinds):
            if kind == "logistic":
                s = _sigmoid(z[i])
                d[i] = (self.hi[i] - self.lo[i]) * s * (1.0 - s)
            elif kind == "exp":
                d[i] = math.exp(z[i])
            else:
                d[i] = 0.0 if np.logaddexp(0.0, z[i]) >= self.hi[i] else _sigmoid(z[i])
        return d


def fit_bounds(cfg: FitConfig, surrogate=None) -> Dict[str, Tuple[float, float]]:
    bounds = dict(DEFAULT_BOUNDS)
    bounds.update(cfg.bounds)
    if surrogate is not None:
        domain = surrogate.domain
        for name in ("mu", "alpha", "beta", "kappa"):
            lo, hi = getattr(domain, name)
            bounds[name] = (max(bounds[name][0], lo), min(bounds[name][1], hi))
            if not bounds[name][0] < bounds[name][1]:
                raise ParameterError(f"fit bounds for {name} do not overlap the surrogate domain")
    return bounds


# -- evaluators --------------------------------------------------------


class OracleEvaluator:
    """Quadrature rendering of the observation's pixels."""

    differentiable = False

    def __init__(self, obs: Observation, rule: Tuple[int, int] = (32, 64), normalization: str = "table",
                 threads: int = 1, cache_dir: Optional[str] = None):
        self.obs = obs
        self.rule = tuple(rule)
        self.normalization = normalization
        self.threads = threads
        self.cache_dir = cache_dir
        self.s_in = np.array([obs.E0, 0.0, 0.0, 0.0])

    def stokes(self, params: FmbrdfParams) -> np.ndarray:
        model = get_model(params, self.rule[0], self.rule[1], self.normalization,
                          threads=self.threads, cache_dir=self.cache_dir)
        out = model.total_stokes_batch(self.obs.N, self.obs.L, self.obs.V, self.s_in)
        _check_finite(out, self.obs)
        return out


def restrict_to_domain(obs: Observation, domain) -> Tuple[Observation, np.ndarray]:
    """Drop pixels whose canonical (theta_L, theta_V) lie outside the surrogate domain.

    Returns the reduced observation and the keep mask over the input pixels.
    """
    theta_l, theta_v, dphi, _ = canonicalize(obs.N, obs.L, obs.V)
    lo, hi = domain.body_bounds()
    keep = domain.contains(np.stack([theta_l, theta_v, dphi], axis=-1), (lo[:3], hi[:3]))
    dropped = int(obs.size - keep.sum())
    if dropped == 0:
        return obs, keep
    if dropped == obs.size:
        raise EvaluationError("no valid pixels")
    logger.warning(f"Excluding {dropped} of {obs.size} pixels outside the surrogate angular domain")
    return obs.subset(keep), keep


class SurrogateEvaluator:
    """Surrogate rendering with the geometry fixed; differentiable in the parameters."""

    differentiable = True

    def __init__(self, obs: Observation, surrogate):
        self.obs = obs
        self.surrogate = surrogate
        theta_l, theta_v, dphi, frame_map = canonicalize(obs.N, obs.L, obs.V)
        angles = np.stack([theta_l, theta_v, dphi], axis=-1)
        lo, hi = surrogate.domain.body_bounds()
        self.surrogate.domain.check(angles, (lo[:3], hi[:3]))
        self.angles = torch.as_tensor(angles, dtype=torch.float64)
        self.signs = torch.as_tensor(frame_map.signs, dtype=torch.float64)
        self.geometry = SurfaceGeometry.from_directions(obs.N, obs.L, obs.V)
        self.param_columns = [NAMES.index(name) for name in BODY_INPUTS[3:]]

    def stokes_torch(self, p: torch.Tensor) -> torch.Tensor:
        mu, ks, rk, alpha, beta = p[0], p[1], p[2], p[3], p[4]
        count = self.angles.shape[0]
        columns = p[self.param_columns].unsqueeze(0).expand(count, -1)
        body = self.surrogate.body_torch(torch.cat([self.angles, columns], dim=-1))
        body = body * (ks * rk * self.obs.E0)
        body = torch.stack([body[:, 0], body[:, 1], body[:, 2] * self.signs], dim=-1)
        surface = surface_stokes_torch(mu, ks, alpha, beta, self.geometry, self.surrogate.lambda_torch, self.obs.E0)
        return surface + body

    def stokes(self, params: FmbrdfParams) -> np.ndarray:
        count = self.angles.shape[0]
        x = np.concatenate([self.angles.numpy(), np.tile(params.as_array()[self.param_columns], (count, 1))], axis=1)
        self.surrogate.domain.check(x)
        with torch.no_grad():
            out = self.stokes_torch(torch.as_tensor(params.as_array(), dtype=torch.float64)).numpy()
        _check_finite(out, self.obs)
        return out


def _check_finite(out: np.ndarray, obs: Observation) -> None:
    finite = np.all(np.isfinite(out), axis=-1)
    if not np.all(finite):
        raise EvaluationError("evaluation failure at pixel", pixel=int(obs.pixels[np.flatnonzero(~finite)[0]]))


def make_evaluator(obs: Observation, cfg: FitConfig, surrogate=None, cache_dir: Optional[str] = None):
    if cfg.mode == "surrogate":
        if surrogate is None:
            raise ConfigError("surrogate mode requires a surrogate model file")
        return SurrogateEvaluator(obs, surrogate)
    return OracleEvaluator(obs, cfg.rule, cfg.normalization, cfg.threads, cache_dir)


# -- objective ---------------------------------------------------------


def dolp_torch(stokes: torch.Tensor) -> torch.Tensor:
    linear = torch.sqrt(stokes[..., 1] ** 2 + stokes[..., 2] ** 2 + DOLP_EPS)
    return linear / torch.clamp(stokes[..., 0], min=1e-12)


def _penalty(pred: torch.Tensor, target: torch.Tensor, kind: str, delta: float) -> torch.Tensor:
    if kind == "huber":
        return F.huber_loss(pred, target, reduction="none", delta=delta)
    return (pred - target) ** 2


def loss_from_stokes(stokes, obs: Observation, weights, cfg: Optional[FitConfig] = None) -> torch.Tensor:
    """Intensity term (1/M) sum (I_obs - I)^2 plus DoLP term sum w (rho_obs - rho)^2 / sum w.

    ``stokes`` may be a numpy array or a tensor carrying gradients; AoLP never enters.
    """
    cfg = cfg or FitConfig()
    stokes = torch.as_tensor(stokes, dtype=torch.float64)
    total = stokes.new_zeros(())
    if cfg.use_intensity:
        observed = torch.as_tensor(obs.intensity, dtype=torch.float64)
        total = total + torch.mean(_penalty(stokes[:, 0], observed, cfg.loss_kind, cfg.huber_delta))
    if cfg.use_polarization:
        w = torch.as_tensor(np.asarray(weights, dtype=float), dtype=torch.float64)
        observed = torch.as_tensor(obs.dolp, dtype=torch.float64)
        residual = _penalty(dolp_torch(stokes), observed, cfg.loss_kind, cfg.huber_delta)
        total = total + torch.sum(w * residual) / torch.sum(w)
    return total


def loss(p: FmbrdfParams, obs: Observation, weights, evaluator, cfg: Optional[FitConfig] = None) -> float:
    if len(weights) != obs.size:
        raise ConfigError(f"weights ({len(weights)}) are not aligned with the mask ({obs.size})")
    return float(loss_from_stokes(evaluator.stokes(p), obs, weights, cfg))


def residual_rms(stokes: np.ndarray, obs: Observation) -> Tuple[float, float]:
    d_i = stokes[:, 0] - obs.intensity
    d_rho = dolp_array(stokes) - obs.dolp
    return float(np.sqrt(np.mean(d_i * d_i))), float(np.sqrt(np.mean(d_rho * d_rho)))


# -- outlier weights ---------------------------------------------------


def _quartic_design(theta_deg: np.ndarray) -> np.ndarray:
    return np.stack([theta_deg ** 4, theta_deg ** 3, theta_deg ** 2, theta_deg], axis=-1)


def robust_dolp_fit(theta_deg: np.ndarray, dolp: np.ndarray, rounds: int = 10) -> np.ndarray:
    """Quartic (no constant term) DoLP trend in theta_NV, refit on points with residual < 6 * median."""
    x, y = theta_deg, dolp
    coeffs = np.zeros(4)
    for _ in range(rounds):
        if x.size < 4:
            break
        coeffs, *_ = np.linalg.lstsq(_quartic_design(x), y, rcond=None)
        r = np.abs(y - _quartic_design(x) @ coeffs)
        keep = r < 6.0 * np.median(r)
        if not np.any(keep) or np.all(keep):
            break
        x, y = x[keep], y[keep]
    return coeffs


def classify_outliers(obs: Observation, rule: str = "mad", threshold: float = 0.05) -> np.ndarray:
    if obs.size == 0:
        raise EvaluationError("no valid pixels")
    if rule == "mad":
        median = np.median(obs.dolp)
        mad = np.median(np.abs(obs.dolp - median))
        return obs.dolp > median + 2.0 * mad
    if rule == "polyfit":
        theta = obs.theta_nv_deg()
        coeffs = robust_dolp_fit(theta, obs.dolp)
        return (obs.dolp - _quartic_design(theta) @ coeffs) >= threshold
    raise ParameterError(f"unknown outlier rule '{rule}'")


def compute_weights(obs: Observation, rule: str = "mad", threshold: float = 0.05) -> np.ndarray:
    """Outliers weighted by #inliers / #outliers, inliers by 1."""
    outliers = classify_outliers(obs, rule, threshold)
    weights = np.ones(obs.size)
    n_out = int(outliers.sum())
    if n_out > 0:
        weights[outliers] = (obs.size - n_out) / n_out
    logger.debug(f"Outlier rule '{rule}': {n_out} of {obs.size} pixels, weight {weights.max():.3g}")
    return weights


# -- gradient ----------------------------------------------------------


def _fd_steps(values: np.ndarray) -> np.ndarray:
    return FD_RELATIVE_STEP * np.maximum(np.abs(values), 1e-2)


def gradient(p: FmbrdfParams, obs: Observation, weights, evaluator, cfg: Optional[FitConfig] = None,
             bounds: Optional[Dict[str, Tuple[float, float]]] = None) -> np.ndarray:
    """d(loss)/d(mu, ks, rk, alpha, beta, kappa)."""
    cfg = cfg or FitConfig()
    if evaluator.differentiable:
        x = torch.as_tensor(p.as_array(), dtype=torch.float64).clone().requires_grad_(True)
        value = loss_from_stokes(evaluator.stokes_torch(x), obs, weights, cfg)
        if not torch.isfinite(value):
            raise EvaluationError("evaluation failure at pixel", pixel=int(obs.pixels[0]))
        (grad,) = torch.autograd.grad(value, x)
        return grad.numpy()

    merged = dict(DEFAULT_BOUNDS)
    merged.update(bounds or cfg.bounds)
    values = p.as_array()
    steps = _fd_steps(values)
    grad = np.zeros(len(NAMES))
    for i, name in enumerate(NAMES):
        lo, hi = merged[name]
        h = steps[i]
        up, down = values.copy(), values.copy()
        if values[i] - h < lo:
            up[i] += h
            grad[i] = (loss(FmbrdfParams.from_array(up), obs, weights, evaluator, cfg)
                       - loss(p, obs, weights, evaluator, cfg)) / h
        elif values[i] + h > hi:
            down[i] -= h
            grad[i] = (loss(p, obs, weights, evaluator, cfg)
                       - loss(FmbrdfParams.from_array(down), obs, weights, evaluator, cfg)) / h
        else:
            up[i] += h
            down[i] -= h
            grad[i] = (loss(FmbrdfParams.from_array(up), obs, weights, evaluator, cfg)
                       - loss(FmbrdfParams.from_array(down), obs, weights, evaluator, cfg)) / (2.0 * h)
    return grad


# -- fit ---------------------------------------------------------------


def start_points(cfg: FitConfig, reparam: Reparameterization) -> List[FmbrdfParams]:
    starts = [cfg.initial]
    base = cfg.initial.as_array()
    for k in range(1, cfg.multi_start):
        rng = np.random.default_rng(cfg.seed + k)
        perturbed = base * (1.0 + rng.uniform(-0.2, 0.2, size=base.shape))
        starts.append(FmbrdfParams.from_array(reparam.clip_inside(perturbed)))
    return starts


def _run_adam(start: FmbrdfParams, obs: Observation, weights, evaluator, cfg: FitConfig,
              reparam: Reparameterization, bounds) -> Tuple[FmbrdfParams, List[float], str]:
    z = torch.tensor(reparam.to_unconstrained(start), dtype=torch.float64, requires_grad=True)
    optimizer = torch.optim.Adam([z], lr=cfg.adam.step, betas=(cfg.adam.beta1, cfg.adam.beta2), eps=cfg.adam.eps)
    trajectory: List[float] = []
    reason = "max_iterations"
    good = start
    for it in range(cfg.adam.iterations + 1):
        z_np = z.detach().numpy().copy()
        params = reparam.to_params(z_np)
        try:
            value = loss(params, obs, weights, evaluator, cfg)
        except EvaluationError:
            logger.warning(f"Evaluation failed at iteration {it}", exc_info=True)
            value = math.nan
        trajectory.append(value)
        if not math.isfinite(value):
            reason = "diverged"
            break
        good = params
        if value <= cfg.loss_tolerance:
            reason = "loss_tolerance"
            break
        if it > 0 and abs(trajectory[-2] - value) <= cfg.rel_tolerance * max(abs(trajectory[-2]), 1e-300):
            reason = "rel_tolerance"
            break
        if it == cfg.adam.iterations:
            break
        g_params = gradient(params, obs, weights, evaluator, cfg, bounds)
        g_z = g_params * reparam.jacobian(z_np)
        if not np.all(np.isfinite(g_z)):
            reason = "diverged"
            break
        optimizer.zero_grad()
        z.grad = torch.as_tensor(g_z, dtype=torch.float64)
        optimizer.step()
        if it % 100 == 0:
            logger.debug(f"Adam iteration {it}: loss {value:.6g}")
    return good, trajectory, reason


def fit(obs: Observation, cfg: FitConfig, surrogate=None, weights: Optional[np.ndarray] = None,
        cache_dir: Optional[str] = None, evaluator=None) -> FitReport:
    started = time.monotonic()
    bounds = fit_bounds(cfg, surrogate if cfg.mode == "surrogate" else None)
    reparam = Reparameterization(bounds)
    excluded = 0
    if cfg.mode == "surrogate" and surrogate is not None and evaluator is None:
        obs, keep = restrict_to_domain(obs, surrogate.domain)
        excluded = int(keep.size - keep.sum())
        if weights is not None:
            weights = np.asarray(weights, dtype=float)
            if weights.shape != keep.shape:
                raise ConfigError(f"weights ({weights.size}) are not aligned with the mask ({keep.size})")
            weights = weights[keep]
    evaluator = evaluator or make_evaluator(obs, cfg, surrogate, cache_dir)
    if weights is None:
        weights = compute_weights(obs, cfg.outlier_rule, cfg.outlier_threshold)

    best = None
    start_losses: List[float] = []
    for k, start in enumerate(start_points(cfg, reparam)):
        params, trajectory, reason = _run_adam(start, obs, weights, evaluator, cfg, reparam, bounds)
        final = trajectory[-1]
        start_losses.append(final)
        logger.info(f"Start {k}: loss {trajectory[0]:.6g} -> {final:.6g} after {len(trajectory) - 1} iterations ({reason})")
        score = final if math.isfinite(final) else math.inf
        if best is None or score < best[0]:
            best = (score, k, start, params, trajectory, reason)

    _, k, start, params, trajectory, reason = best
    if reason == "diverged":
        logger.warning(f"Loss diverged; reporting the last finite iterate of start {k}")
        trajectory = [v for v in trajectory if math.isfinite(v)] or [math.nan]
    try:
        i_rms, rho_rms = residual_rms(evaluator.stokes(params), obs)
    except EvaluationError:
        i_rms, rho_rms = math.nan, math.nan
    converged = reason != "diverged" and math.isfinite(trajectory[-1]) and trajectory[-1] <= trajectory[0]
    report = FitReport(
        params=params, initial_params=start, loss_trajectory=list(trajectory),
        intensity_rms=i_rms, dolp_rms=rho_rms, wall_time=time.monotonic() - started,
        converged=converged, stop_reason=reason, mode=cfg.mode, start_losses=start_losses, best_start=k,
        excluded_pixels=excluded,
    )
    logger.info(f"Fit finished in {report.wall_time:.1f}s: {params.as_dict()} (converged={converged})")
    return report


def novel_light_nrmse(fitted: FmbrdfParams, reference: FmbrdfParams, N: np.ndarray, V: np.ndarray, L: np.ndarray,
                      E0: float = 1.0, rule: Tuple[int, int] = (32, 64), normalization: str = "table",
                      threads: int = 1) -> float:
    """RMS radiance difference under a new light, normalized by the mean reference radiance."""
    N = np.atleast_2d(N)
    lit = (N @ L) > 1e-6
    if not np.any(lit):
        raise EvaluationError("no valid pixels")
    s_in = np.array([E0, 0.0, 0.0, 0.0])
    values = []
    for params in (fitted, reference):
        model = get_model(params, rule[0], rule[1], normalization, threads=threads)
        values.append(model.total_stokes_batch(N[lit], L, V, s_in)[:, 0])
    diff = values[0] - values[1]
    return float(np.sqrt(np.mean(diff * diff)) / max(np.mean(values[1]), 1e-300))


class ReflectometryService:
    """Fitting front end bound to the process settings."""

    def __init__(self, settings):
        self.settings = settings

    def fit(self, obs: Observation, cfg: FitConfig, surrogate=None) -> FitReport:
        return fit(obs, cfg, surrogate=surrogate, cache_dir=self.settings.FMBRDF_CACHE_DIR)
