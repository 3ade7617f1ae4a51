# File: surrogate/training.py

"""Training sets and training loop for the body and Smith networks.

Inputs are drawn from scrambled Sobol sequences over the domain box and
labelled with the quadrature oracle. The held-out split is a seeded
permutation, so ``validate`` can rebuild exactly the held-out samples from
the replay spec stored with the model.
"""

import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy.stats import qmc

from microgeometry.microfacet import get_ndf, smith_lambda_direct
from microgeometry.quadrature import build_rule
from models.brdf import FmbrdfModel, FmbrdfParams
from surrogate.canonical import configuration
from surrogate.model import DomainBox, SurrogateModel
from surrogate.networks import (
    DEFAULT_BODY_HIDDEN,
    DEFAULT_SMITH_HIDDEN,
    BodyNetwork,
    SmithNetwork,
    raw_from_polarization,
)
from surrogate import serialization
from utils.errors import SurrogateDomainError, TrainingDivergedError

logger = logging.getLogger(__name__)

UNPOLARIZED = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class TrainingConfig:
    n_samples: int = 10_000
    n_smith_samples: int = 4096
    seed: int = 0
    rule: Tuple[int, int] = (16, 32)
    normalization: str = "discrete"
    body_hidden: Tuple[int, ...] = DEFAULT_BODY_HIDDEN
    smith_hidden: Tuple[int, ...] = DEFAULT_SMITH_HIDDEN
    epochs: int = 2000
    smith_epochs: int = 1500
    batch_size: int = 1024
    learning_rate: float = 2e-3
    validation_fraction: float = 0.1
    threads: int = 1
    domain: DomainBox = field(default_factory=DomainBox)

    def replay_spec(self) -> Dict[str, Any]:
        return {
            "n_samples": self.n_samples,
            "n_smith_samples": self.n_smith_samples,
            "seed": self.seed,
            "rule": list(self.rule),
            "normalization": self.normalization,
            "validation_fraction": self.validation_fraction,
        }


@dataclass
class TrainingSet:
    """Body samples (theta_L, theta_V, dphi, alpha, beta, kappa, mu) -> (s0, s1, s2) per unit
    body albedo and irradiance, and Smith samples (theta_v, alpha, beta) -> Lambda."""

    inputs: np.ndarray
    targets: np.ndarray
    smith_inputs: np.ndarray
    smith_targets: np.ndarray
    domain: DomainBox = field(default_factory=DomainBox)

    def __post_init__(self):
        if not (np.all(np.isfinite(self.targets)) and np.all(np.isfinite(self.smith_targets))):
            raise ValueError("training targets must be finite")
        if len(self.inputs) and not np.all(self.domain.contains(self.inputs)):
            raise SurrogateDomainError("surrogate domain violation in training inputs")

    def __len__(self) -> int:
        return len(self.inputs)


def sobol_points(lo: np.ndarray, hi: np.ndarray, n: int, seed: int) -> np.ndarray:
    if n <= 0:
        return np.zeros((0, lo.size))
    sampler = qmc.Sobol(d=lo.size, scramble=True, seed=seed)
    with warnings.catch_warnings():
        # sample counts need not be powers of two
        warnings.simplefilter("ignore", UserWarning)
        unit = sampler.random(n)
    return qmc.scale(unit, lo, hi)


def split_indices(n: int, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """(train, held-out) indices; the held-out part is never empty when n >= 2."""
    if n == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    order = np.random.default_rng(seed).permutation(n)
    n_val = min(n - 1, max(1, int(math.ceil(fraction * n)))) if n > 1 else 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def body_target(x: np.ndarray, rule_size: Tuple[int, int] = (16, 32), normalization: str = "discrete") -> np.ndarray:
    """Oracle body Stokes (s0, s1, s2) for one canonical input row."""
    theta_l, theta_v, dphi, alpha, beta, kappa, mu = (float(v) for v in x)
    params = FmbrdfParams(mu=mu, ks=1.0, rk=1.0, alpha=alpha, beta=beta, kappa=kappa)
    model = FmbrdfModel(params, build_rule(*rule_size), normalization=normalization, smith="direct")
    N, L, V = configuration(theta_l, theta_v, dphi)
    return model.body_stokes_batch(N, L, V, UNPOLARIZED)[0, :3]


def smith_target(x: np.ndarray) -> float:
    theta_v, alpha, beta = (float(v) for v in x)
    return smith_lambda_direct(get_ndf(alpha, beta), theta_v)


def _label(fn, rows: np.ndarray, threads: int) -> list:
    if threads <= 1:
        return [fn(row) for row in rows]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, rows))


def generate_training_set(
    domain: Optional[DomainBox] = None,
    n_samples: int = 10_000,
    rule: Tuple[int, int] = (16, 32),
    seed: int = 0,
    n_smith_samples: int = 4096,
    normalization: str = "discrete",
    threads: int = 1,
) -> TrainingSet:
    domain = domain or DomainBox()
    started = time.monotonic()
    inputs = sobol_points(*domain.body_bounds(), n_samples, seed)
    smith_inputs = sobol_points(*domain.smith_bounds(), n_smith_samples, seed + 1)
    logger.info(f"Labelling {len(inputs)} body and {len(smith_inputs)} Smith samples with the {rule[0]}x{rule[1]} oracle")

    targets = np.array(_label(lambda x: body_target(x, rule, normalization), inputs, threads)).reshape(-1, 3)
    smith_targets = np.array(_label(smith_target, smith_inputs, threads), dtype=float).reshape(-1)
    logger.info(f"Training set ready in {time.monotonic() - started:.1f}s")
    return TrainingSet(inputs, targets, smith_inputs, smith_targets, domain)


def resolution_check(ts: TrainingSet, fraction: float = 0.01, rule: Tuple[int, int] = (16, 32),
                     normalization: str = "discrete", seed: int = 0) -> float:
    """Max relative s0 change when a random subset is relabelled at doubled resolution."""
    if len(ts) == 0:
        return 0.0
    count = max(1, int(round(fraction * len(ts))))
    picks = np.random.default_rng(seed).choice(len(ts), size=count, replace=False)
    doubled = (2 * rule[0], 2 * rule[1])
    worst = 0.0
    for i in picks:
        fine = body_target(ts.inputs[i], doubled, normalization)
        worst = max(worst, abs(fine[0] - ts.targets[i, 0]) / abs(fine[0]))
    return worst


# -- training ----------------------------------------------------------


def _body_loss(net: BodyNetwork, x: torch.Tensor, raw_targets: torch.Tensor) -> torch.Tensor:
    raw = net.raw(x)
    return torch.mean((raw - raw_targets) ** 2)


def _smith_loss(net: SmithNetwork, x: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    return torch.mean((net.log1p_lambda(x) - targets) ** 2)


def _fit_network(name: str, net: torch.nn.Module, loss_fn, x: torch.Tensor, y: torch.Tensor,
                 epochs: int, batch_size: int, learning_rate: float, seed: int) -> float:
    generator = torch.Generator().manual_seed(seed)
    optimizer = torch.optim.Adam(net.parameters(), lr=learning_rate)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=max(1, epochs))
    n = x.shape[0]
    last = float("nan")
    for epoch in range(epochs):
        order = torch.randperm(n, generator=generator)
        total = 0.0
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            optimizer.zero_grad()
            loss = loss_fn(net, x[batch], y[batch])
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"training diverged ({name} network, epoch {epoch})")
            loss.backward()
            optimizer.step()
            total += float(loss) * batch.numel()
        scheduler.step()
        last = total / n
        if epoch % 250 == 0 or epoch == epochs - 1:
            logger.info(f"[{name}] epoch {epoch + 1}/{epochs} loss {last:.3e}")
    return last


def _body_raw_targets(targets: np.ndarray, log_mean: float, log_std: float) -> torch.Tensor:
    s0 = targets[:, 0]
    qu = torch.as_tensor(targets[:, 1:3] / s0[:, None], dtype=torch.float64)
    raw = torch.empty((targets.shape[0], 3), dtype=torch.float64)
    raw[:, 0] = torch.as_tensor((np.log(s0) - log_mean) / log_std, dtype=torch.float64)
    raw[:, 1:3] = raw_from_polarization(qu)
    return raw


def train(ts: TrainingSet, config: Optional[TrainingConfig] = None) -> SurrogateModel:
    config = config or TrainingConfig()
    if len(ts) == 0 or len(ts.smith_inputs) == 0:
        raise ValueError("training set is empty")
    if np.any(ts.targets[:, 0] <= 0.0):
        raise ValueError("body intensity targets must be positive")
    torch.manual_seed(config.seed)
    domain = ts.domain

    train_idx, _ = split_indices(len(ts), config.validation_fraction, config.seed)
    smith_train, _ = split_indices(len(ts.smith_inputs), config.validation_fraction, config.seed + 1)

    log_s0 = np.log(ts.targets[train_idx, 0])
    log_mean = float(np.mean(log_s0))
    log_std = float(max(np.std(log_s0), 1e-6))
    body = BodyNetwork(*domain.body_bounds(), hidden=config.body_hidden, log_mean=log_mean, log_std=log_std).double()
    smith = SmithNetwork(*domain.smith_bounds(), hidden=config.smith_hidden).double()

    started = time.monotonic()
    x_body = torch.as_tensor(ts.inputs[train_idx], dtype=torch.float64)
    y_body = _body_raw_targets(ts.targets[train_idx], log_mean, log_std)
    _fit_network("body", body, _body_loss, x_body, y_body,
                 config.epochs, config.batch_size, config.learning_rate, config.seed)

    x_smith = torch.as_tensor(ts.smith_inputs[smith_train], dtype=torch.float64)
    y_smith = torch.as_tensor(np.log1p(ts.smith_targets[smith_train]), dtype=torch.float64)
    _fit_network("smith", smith, _smith_loss, x_smith, y_smith,
                 config.smith_epochs, config.batch_size, config.learning_rate, config.seed + 1)
    logger.info(f"Surrogate training finished in {time.monotonic() - started:.1f}s")

    replay = config.replay_spec()
    arch = {"body_hidden": list(config.body_hidden), "smith_hidden": list(config.smith_hidden)}
    # metrics are measured on the float32 weights that actually get stored
    model = serialization.from_bytes(serialization.to_bytes(SurrogateModel(body, smith, domain, replay=replay, arch=arch)))
    model.metrics = evaluate_metrics(model, ts, config.validation_fraction, config.seed)
    logger.info(f"Validation metrics: {model.metrics}")
    return model


def evaluate_metrics(model: SurrogateModel, ts: TrainingSet, fraction: float, seed: int) -> Dict[str, float]:
    _, val_idx = split_indices(len(ts), fraction, seed)
    _, smith_val = split_indices(len(ts.smith_inputs), fraction, seed + 1)
    return held_out_metrics(model, ts.inputs[val_idx], ts.targets[val_idx],
                            ts.smith_inputs[smith_val], ts.smith_targets[smith_val])


def held_out_metrics(model: SurrogateModel, inputs: np.ndarray, targets: np.ndarray,
                     smith_inputs: np.ndarray, smith_targets: np.ndarray) -> Dict[str, float]:
    metrics: Dict[str, float] = {"n_validation": float(len(inputs)), "n_smith_validation": float(len(smith_inputs))}
    with torch.no_grad():
        if len(inputs):
            pred = model.body(torch.as_tensor(inputs, dtype=torch.float64)).numpy()
            rel = np.abs(pred[:, 0] - targets[:, 0]) / np.abs(targets[:, 0])
            dolp_pred = np.hypot(pred[:, 1], pred[:, 2]) / pred[:, 0]
            dolp_true = np.hypot(targets[:, 1], targets[:, 2]) / targets[:, 0]
            metrics["body_max_rel_s0"] = float(np.max(rel))
            metrics["body_mean_rel_s0"] = float(np.mean(rel))
            metrics["body_max_abs_dolp"] = float(np.max(np.abs(dolp_pred - dolp_true)))
        if len(smith_inputs):
            lam = model.smith(torch.as_tensor(smith_inputs, dtype=torch.float64)).numpy()
            metrics["smith_max_abs_lambda"] = float(np.max(np.abs(lam - smith_targets)))
    return metrics


def validate(model: SurrogateModel, threads: int = 1) -> Dict[str, float]:
    """Rebuild the held-out samples from the replay spec and recompute the metrics."""
    spec = model.replay
    if not spec:
        raise ValueError("surrogate model carries no replay spec")
    domain = model.domain
    seed = int(spec["seed"])
    fraction = float(spec["validation_fraction"])
    rule = tuple(spec["rule"])
    inputs = sobol_points(*domain.body_bounds(), int(spec["n_samples"]), seed)
    smith_inputs = sobol_points(*domain.smith_bounds(), int(spec["n_smith_samples"]), seed + 1)
    _, val_idx = split_indices(len(inputs), fraction, seed)
    _, smith_val = split_indices(len(smith_inputs), fraction, seed + 1)
    logger.info(f"Replaying {len(val_idx)} held-out body and {len(smith_val)} Smith samples")

    targets = np.array(_label(lambda x: body_target(x, rule, spec["normalization"]), inputs[val_idx], threads)).reshape(-1, 3)
    smith_targets = np.array(_label(smith_target, smith_inputs[smith_val], threads), dtype=float).reshape(-1)
    return held_out_metrics(model, inputs[val_idx], targets, smith_inputs[smith_val], smith_targets)


def quality_failures(metrics: Dict[str, float], max_rel_s0: float = 0.02, max_abs_dolp: float = 0.02) -> Sequence[str]:
    failures = []
    if metrics.get("body_max_rel_s0", math.inf) > max_rel_s0:
        failures.append(f"body s0 max relative error {metrics.get('body_max_rel_s0')} > {max_rel_s0}")
    if metrics.get("body_max_abs_dolp", math.inf) > max_abs_dolp:
        failures.append(f"body DoLP max error {metrics.get('body_max_abs_dolp')} > {max_abs_dolp}")
    return failures
