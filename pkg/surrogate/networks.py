# File: surrogate/networks.py

import logging
from typing import Dict, List, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

logger = logging.getLogger(__name__)

BODY_INPUTS = ("theta_l", "theta_v", "dphi", "alpha", "beta", "kappa", "mu")
SMITH_INPUTS = ("theta_v", "alpha", "beta")
DEFAULT_BODY_HIDDEN = (64, 64, 64, 64)
DEFAULT_SMITH_HIDDEN = (32, 32)


class Mlp(nn.Module):
    """Fully connected network with SiLU activations (smooth, so input gradients exist everywhere)."""

    def __init__(self, n_in: int, hidden: Sequence[int], n_out: int):
        super().__init__()
        widths = [n_in, *hidden]
        self.hidden = nn.ModuleList(nn.Linear(a, b) for a, b in zip(widths[:-1], widths[1:]))
        self.head = nn.Linear(widths[-1], n_out)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.hidden:
            x = F.silu(layer(x))
        return self.head(x)


class InputScaler(nn.Module):
    """Maps a box [lo, hi] affinely onto [-1, 1]."""

    def __init__(self, lo: Sequence[float], hi: Sequence[float]):
        super().__init__()
        self.register_buffer("lo", torch.tensor(list(lo), dtype=torch.float64))
        self.register_buffer("hi", torch.tensor(list(hi), dtype=torch.float64))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        lo = self.lo.to(x.dtype)
        hi = self.hi.to(x.dtype)
        return 2.0 * (x - lo) / (hi - lo) - 1.0


class BodyNetwork(nn.Module):
    """Body Stokes per unit body albedo and irradiance in the canonical outgoing frame.

    Outputs (s0, s1, s2) with s0 = exp(log-intensity) >= 0 and the linear
    part squashed through tanh so that DoLP < 1.
    """

    def __init__(self, lo: Sequence[float], hi: Sequence[float], hidden: Sequence[int] = DEFAULT_BODY_HIDDEN,
                 log_mean: float = 0.0, log_std: float = 1.0):
        super().__init__()
        self.scaler = InputScaler(lo, hi)
        self.mlp = Mlp(len(BODY_INPUTS), hidden, 3)
        self.register_buffer("log_mean", torch.tensor(float(log_mean), dtype=torch.float64))
        self.register_buffer("log_std", torch.tensor(float(log_std), dtype=torch.float64))

    def raw(self, x: torch.Tensor) -> torch.Tensor:
        return self.mlp(self.scaler(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.raw(x)
        log_s0 = y[..., 0] * self.log_std.to(y.dtype) + self.log_mean.to(y.dtype)
        s0 = torch.exp(log_s0)
        qu = polarization_from_raw(y[..., 1:3])
        return torch.stack([s0, s0 * qu[..., 0], s0 * qu[..., 1]], dim=-1)


def polarization_from_raw(r: torch.Tensor) -> torch.Tensor:
    norm = torch.sqrt(torch.sum(r * r, dim=-1, keepdim=True) + 1e-12)
    return r * (torch.tanh(norm) / norm)


def raw_from_polarization(qu: torch.Tensor) -> torch.Tensor:
    """Inverse of ``polarization_from_raw`` for targets with DoLP < 1."""
    dolp = torch.sqrt(torch.sum(qu * qu, dim=-1, keepdim=True))
    dolp = torch.clamp(dolp, max=1.0 - 1e-6)
    scale = torch.where(dolp > 1e-12, torch.atanh(dolp) / torch.clamp(dolp, min=1e-12), torch.ones_like(dolp))
    return qu * scale


class SmithNetwork(nn.Module):
    """log1p(Lambda) over (theta_v, alpha, beta), kept >= 0 by a softplus head."""

    def __init__(self, lo: Sequence[float], hi: Sequence[float], hidden: Sequence[int] = DEFAULT_SMITH_HIDDEN):
        super().__init__()
        self.scaler = InputScaler(lo, hi)
        self.mlp = Mlp(len(SMITH_INPUTS), hidden, 1)

    def log1p_lambda(self, x: torch.Tensor) -> torch.Tensor:
        return F.softplus(self.mlp(self.scaler(x))[..., 0])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.expm1(self.log1p_lambda(x))


def architecture(hidden: Sequence[int], n_in: int, n_out: int) -> Dict[str, object]:
    return {"inputs": n_in, "hidden": list(hidden), "outputs": n_out, "activation": "silu"}


def state_names(module: nn.Module) -> List[str]:
    return list(module.state_dict().keys())
