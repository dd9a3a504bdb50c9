"""Context priors, the two prediction heads and the forecasting losses."""

from __future__ import annotations

import math

import torch
from torch import nn

from .deconfound import ReprPair
from .errors import NonFiniteError, ShapeError


class PriorNet(nn.Module):
    """alpha = softmax(u([mean Z_I, mean Z_V])), one pair per sample."""

    def __init__(self, dim: int):
        super().__init__()
        self.u = nn.Linear(2 * dim, 2)

    def forward(self, pair: ReprPair) -> torch.Tensor:
        pooled = torch.cat([pair.z_i.mean(dim=(1, 2)), pair.z_v.mean(dim=(1, 2))], dim=-1)
        return torch.softmax(self.u(pooled), dim=-1)


class PredictionHead(nn.Module):
    """Collapse T' with a 1-D convolution, then a two-layer perceptron to F outputs.

    ``loc`` and ``scale`` undo the input standardisation so the head speaks
    in flow units.
    """

    def __init__(self, dim: int, t_out: int, out_dim: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or dim
        self.t_out = t_out
        self.conv = nn.Conv1d(dim, dim, t_out)
        self.mlp = nn.Sequential(nn.ReLU(), nn.Linear(dim, hidden), nn.ReLU(), nn.Linear(hidden, out_dim))
        self.register_buffer("loc", torch.zeros(out_dim))
        self.register_buffer("scale", torch.ones(out_dim))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        B, T, N, D = z.shape
        if T != self.t_out:
            raise ShapeError(f"head expects T'={self.t_out}, got {T}")
        collapsed = self.conv(z.permute(0, 2, 3, 1).reshape(B * N, D, T)).reshape(B, N, D)
        return self.mlp(collapsed) * self.scale + self.loc


def mix(alpha: torch.Tensor, h1: torch.Tensor, h2: torch.Tensor) -> torch.Tensor:
    """alpha_1 h1 + alpha_2 h2 with per-sample weights ``[B, 2]``."""
    return alpha[:, 0, None, None] * h1 + alpha[:, 1, None, None] * h2


def prediction_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over nodes, outputs and batch."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    return (pred - target).abs().mean()


def total_loss(l_p, l_s, l_d):
    total = l_p + l_s + l_d
    if not math.isfinite(float(total.detach())):
        raise NonFiniteError(f"non-finite objective: L_P={float(l_p.detach())}, L_S={float(l_s.detach())}, L_D={float(l_d.detach())}")
    return total
