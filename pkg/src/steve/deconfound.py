"""Disentanglement and context-oriented self-supervision.

Covers the two-branch encoder, the variational CLUB mutual-information
penalty, the three self-supervised heads and the gradient reversal layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn
from torch.func import functional_call

from .errors import LabelError
from .graph import N_LOAD_LEVELS, N_TEMPORAL
from .tsrl import TSRL, TsrlConfig

TASKS = ("sl", "ti", "tl")
LOG_2PI = math.log(2.0 * math.pi)


class GradReverse(torch.autograd.Function):
    @staticmethod
    def forward(ctx, z, eta):
        ctx.eta = eta
        return z.view_as(z)

    @staticmethod
    def backward(ctx, grad):
        return -ctx.eta * grad, None


def grl(z: torch.Tensor, eta: float = 1.0) -> torch.Tensor:
    """Identity forward; multiplies the incoming gradient by ``-eta`` on the way back."""
    return GradReverse.apply(z, eta)


def mlp(d_in: int, d_hidden: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, d_hidden), nn.ReLU(), nn.Linear(d_hidden, d_out))


@dataclass
class ReprPair:
    z_i: torch.Tensor  # [B, T', N, D]
    z_v: torch.Tensor

    def __post_init__(self):
        if self.z_i.shape != self.z_v.shape:
            raise ValueError(f"branch shapes differ: {tuple(self.z_i.shape)} vs {tuple(self.z_v.shape)}")


class DualEncoder(nn.Module):
    """Two TSRL encoders with separate parameters."""

    def __init__(self, cfg: TsrlConfig, adjacency):
        super().__init__()
        self.invariant = TSRL(cfg, adjacency)
        self.variant = TSRL(cfg, adjacency)

    def forward(self, x: torch.Tensor) -> ReprPair:
        return ReprPair(self.invariant(x), self.variant(x))


class NodePooler(nn.Module):
    """Per-node 1-D convolution over the time axis, then a mean over what remains."""

    def __init__(self, dim: int, kernel: int):
        super().__init__()
        self.conv = nn.Conv1d(dim, dim, kernel)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        B, T, N, D = z.shape
        seq = z.permute(0, 2, 3, 1).reshape(B * N, D, T)
        return self.conv(seq).mean(dim=-1).reshape(B, N, D)


class VariationalNet(nn.Module):
    """Diagonal Gaussian q(z_i | z_v) with MLP mean and log-variance."""

    LOGVAR_CLAMP = 8.0

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.mean_net = mlp(dim, hidden, dim)
        self.logvar_net = mlp(dim, hidden, dim)

    def forward(self, z_v: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        logvar = self.logvar_net(z_v).clamp(-self.LOGVAR_CLAMP, self.LOGVAR_CLAMP)
        return self.mean_net(z_v), logvar

    def log_prob(self, z_i: torch.Tensor, z_v: torch.Tensor) -> torch.Tensor:
        """log q(z_i[m] | z_v[m]) for aligned rows, shape [M]."""
        mu, logvar = self(z_v)
        return gaussian_log_density(z_i, mu, logvar)

    def pairwise_log_prob(self, z_i: torch.Tensor, z_v: torch.Tensor) -> torch.Tensor:
        """Entry [i, j] is log q(z_i[j] | z_v[i])."""
        mu, logvar = self(z_v)
        return gaussian_log_density(z_i[None, :, :], mu[:, None, :], logvar[:, None, :])


def gaussian_log_density(x, mu, logvar):
    return -0.5 * (((x - mu) ** 2) * torch.exp(-logvar) + logvar + LOG_2PI).sum(dim=-1)


def sample_vectors(pooler: NodePooler, z: torch.Tensor) -> torch.Tensor:
    """One D-vector per sample: pooled node vectors averaged over nodes."""
    return pooler(z).mean(dim=1)


def club_loss(z_i: torch.Tensor, z_v: torch.Tensor, q: VariationalNet) -> torch.Tensor:
    """Sample-based CLUB estimate over a batch of aligned ``[M, D]`` pairs.

    ``q`` is evaluated with detached parameters: the gradient reaches the
    representations only.
    """
    frozen = {k: v.detach() for k, v in q.named_parameters()}
    mu, logvar = functional_call(q, frozen, (z_v,))
    ll = gaussian_log_density(z_i[None, :, :], mu[:, None, :], logvar[:, None, :])
    positive = torch.diagonal(ll)
    # differences first, so identical pairs give exactly zero
    return (positive[:, None] - ll).mean()


def fit_variational(q: VariationalNet, z_i: torch.Tensor, z_v: torch.Tensor, steps: int,
                    optimizer: torch.optim.Optimizer) -> float:
    """Gradient ascent on the mean aligned log-likelihood; returns the last pre-step value."""
    z_i, z_v = z_i.detach(), z_v.detach()
    value = float("nan")
    for _ in range(steps):
        optimizer.zero_grad()
        ll = q.log_prob(z_i, z_v).mean()
        (-ll).backward()
        optimizer.step()
        value = float(ll.detach())
    return value


class SslHeads(nn.Module):
    """Location (N classes), temporal index (48 classes) and load (d values) heads."""

    def __init__(self, dim: int, hidden: int, num_nodes: int, channels: int):
        super().__init__()
        self.location = mlp(dim, hidden, num_nodes)
        self.temporal = mlp(dim, hidden, N_TEMPORAL)
        self.load = mlp(dim, hidden, channels)
        self.num_nodes = num_nodes


def ssl_losses(heads: SslHeads, z_pooled: torch.Tensor, temporal: torch.Tensor,
               load: torch.Tensor) -> dict[str, torch.Tensor]:
    """Task losses on pooled node vectors ``[B, N, D]``.

    sl: cross-entropy of each node's own id; ti: cross-entropy of the target
    step's temporal index from node-averaged logits; tl: squared error of the
    load levels, summed over channels and averaged over nodes.
    """
    B, N, _ = z_pooled.shape
    temporal = torch.as_tensor(temporal, dtype=torch.long)
    load = torch.as_tensor(load)
    if temporal.min() < 0 or temporal.max() >= N_TEMPORAL:
        raise LabelError(f"temporal labels must lie in [0, {N_TEMPORAL - 1}]")
    if load.min() < 0 or load.max() >= N_LOAD_LEVELS:
        raise LabelError(f"load labels must lie in [0, {N_LOAD_LEVELS - 1}]")
    loc_logits = heads.location(z_pooled)
    node_ids = torch.arange(N).expand(B, N)
    l_sl = F.cross_entropy(loc_logits.reshape(B * N, -1), node_ids.reshape(-1))
    l_ti = F.cross_entropy(heads.temporal(z_pooled).mean(dim=1), temporal)
    pred_load = heads.load(z_pooled)
    l_tl = ((pred_load - load.to(pred_load.dtype)) ** 2).sum(dim=-1).mean()
    return {"sl": l_sl, "ti": l_ti, "tl": l_tl}


def adversarial_loss(pooler: NodePooler, heads: SslHeads, pair: ReprPair, temporal, load,
                     weights: torch.Tensor | None = None, eta: float = 1.0, reverse: bool = True,
                     tasks=TASKS) -> tuple[torch.Tensor, torch.Tensor]:
    """Weighted sum of the task losses on ``Z_V`` and on the reversed ``Z_I``.

    Returns the scalar and the vector of the six unweighted terms ordered
    ``(sl_V, ti_V, tl_V, sl_I, ti_I, tl_I)``; dropped tasks are zero there.
    ``reverse=False`` replaces the reversal with a plain pass-through.
    """
    z_i = grl(pair.z_i, eta) if reverse else pair.z_i
    branch_v = ssl_losses(heads, pooler(pair.z_v), temporal, load)
    branch_i = ssl_losses(heads, pooler(z_i), temporal, load)
    zero = pair.z_v.new_zeros(())
    terms = torch.stack([branch_v[t] if t in tasks else zero for t in TASKS]
                        + [branch_i[t] if t in tasks else zero for t in TASKS])
    if weights is None:
        weights = torch.ones(6, dtype=terms.dtype)
    return (weights.to(terms.dtype) * terms).sum(), terms.detach()
