# File: surrogate/model.py

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
import torch

from surrogate.canonical import canonicalize
from surrogate.differentiable import SurfaceGeometry, surface_stokes_torch
from surrogate.networks import BODY_INPUTS, BodyNetwork, SmithNetwork
from utils.errors import SurrogateDomainError

logger = logging.getLogger(__name__)

DOMAIN_TOLERANCE = 1e-9


@dataclass(frozen=True)
class DomainBox:
    """Trained input ranges; angles in radians."""

    theta_max: float = math.radians(85.0)
    alpha: Tuple[float, float] = (0.1, 1.2)
    beta: Tuple[float, float] = (0.6, 4.0)
    kappa: Tuple[float, float] = (0.0, 50.0)
    mu: Tuple[float, float] = (1.05, 3.0)

    def body_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        lo = np.array([0.0, 0.0, 0.0, self.alpha[0], self.beta[0], self.kappa[0], self.mu[0]])
        hi = np.array([self.theta_max, self.theta_max, math.pi, self.alpha[1], self.beta[1], self.kappa[1], self.mu[1]])
        return lo, hi

    def smith_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        lo = np.array([0.0, self.alpha[0], self.beta[0]])
        hi = np.array([self.theta_max, self.alpha[1], self.beta[1]])
        return lo, hi

    def contains(self, x: np.ndarray, bounds: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> np.ndarray:
        lo, hi = bounds or self.body_bounds()
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.all((x >= lo - DOMAIN_TOLERANCE) & (x <= hi + DOMAIN_TOLERANCE) & np.isfinite(x), axis=-1)

    def check(self, x: np.ndarray, bounds: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> None:
        inside = self.contains(x, bounds)
        if not np.all(inside):
            first = int(np.flatnonzero(~inside)[0])
            raise SurrogateDomainError(f"surrogate domain violation at input {first}: {np.atleast_2d(x)[first].tolist()}")

    def as_dict(self) -> Dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DomainBox":
        return cls(
            theta_max=float(data["theta_max"]),
            alpha=tuple(data["alpha"]),
            beta=tuple(data["beta"]),
            kappa=tuple(data["kappa"]),
            mu=tuple(data["mu"]),
        )


class SurrogateModel:
    """Body-reflection and Smith-Lambda networks with their trained domain.

    Evaluation runs in float64 with frozen weights; input gradients come from
    autograd through the networks.
    """

    def __init__(self, body: BodyNetwork, smith: SmithNetwork, domain: DomainBox,
                 metrics: Optional[Dict[str, float]] = None, replay: Optional[Dict[str, Any]] = None,
                 arch: Optional[Dict[str, Any]] = None):
        self.body = body.double().eval()
        self.smith = smith.double().eval()
        for parameter in list(self.body.parameters()) + list(self.smith.parameters()):
            parameter.requires_grad_(False)
        self.domain = domain
        self.metrics = dict(metrics or {})
        self.replay = dict(replay or {})
        self.arch = dict(arch or {})

    # -- raw networks --------------------------------------------------

    def body_torch(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)

    def lambda_torch(self, theta: torch.Tensor, alpha, beta) -> torch.Tensor:
        theta = torch.as_tensor(theta, dtype=torch.float64)
        alpha = torch.as_tensor(alpha, dtype=torch.float64).expand_as(theta)
        beta = torch.as_tensor(beta, dtype=torch.float64).expand_as(theta)
        return self.smith(torch.stack([theta, alpha, beta], dim=-1))

    def infer(self, inputs) -> Tuple[np.ndarray, np.ndarray]:
        """Body Stokes (s0, s1, s2) per unit body albedo and irradiance, with d(output)/d(input).

        Returns values (P, 3) and a Jacobian (P, 3, 7) ordered as ``BODY_INPUTS``.
        """
        x_np = np.atleast_2d(np.asarray(inputs, dtype=float))
        self.domain.check(x_np)
        return _value_and_jacobian(self.body, x_np)

    def infer_lambda(self, inputs) -> Tuple[np.ndarray, np.ndarray]:
        """Lambda over (theta_v, alpha, beta) with its (P, 3) input gradient."""
        x_np = np.atleast_2d(np.asarray(inputs, dtype=float))
        self.domain.check(x_np, self.domain.smith_bounds())
        values, jac = _value_and_jacobian(self.smith, x_np)
        return values, jac

    # -- rendering -----------------------------------------------------

    def body_inputs(self, params, theta_l, theta_v, dphi) -> np.ndarray:
        count = np.shape(theta_l)[0]
        columns = [theta_l, theta_v, dphi] + [np.full(count, getattr(params, name)) for name in BODY_INPUTS[3:]]
        return np.stack(columns, axis=-1)

    def total_stokes(self, params, N, L, V, E0: float) -> np.ndarray:
        """(P, 4) surface plus body Stokes for unpolarized light in the outgoing frames."""
        theta_l, theta_v, dphi, frame_map = canonicalize(N, L, V)
        x = self.body_inputs(params, theta_l, theta_v, dphi)
        self.domain.check(x)
        geo = SurfaceGeometry.from_directions(N, L, V)
        t = lambda v: torch.tensor(float(v), dtype=torch.float64)
        with torch.no_grad():
            body = params.kb * E0 * self.body(torch.as_tensor(x, dtype=torch.float64)).numpy()
            surface = surface_stokes_torch(
                t(params.mu), t(params.ks), t(params.alpha), t(params.beta), geo, self.lambda_torch, E0
            ).numpy()
        out = np.zeros((x.shape[0], 4))
        out[:, :3] = surface + frame_map.apply(body)
        return out


def _value_and_jacobian(module: torch.nn.Module, x_np: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    x = torch.as_tensor(x_np, dtype=torch.float64).clone().requires_grad_(True)
    y = module(x)
    flat = y.reshape(x.shape[0], -1)
    rows = []
    for k in range(flat.shape[1]):
        (grad,) = torch.autograd.grad(flat[:, k].sum(), x, retain_graph=k + 1 < flat.shape[1])
        rows.append(grad)
    jacobian = torch.stack(rows, dim=1)
    values = y.detach().numpy()
    if y.dim() == 1:
        return values, jacobian[:, 0, :].numpy()
    return values, jacobian.numpy()
