"""Traffic sequence encoder: gated temporal convolutions around graph convolutions.

All modules take batched tensors laid out ``[B, T, N, C]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ShapeError, ValidationError


@dataclass(frozen=True)
class TsrlConfig:
    input_channels: int = 1
    hidden_dim: int = 32
    temporal_kernel: int = 3
    spatial_kernel: int = 3
    layers: int = 2

    def output_length(self, T: int) -> int:
        return T - 2 * self.layers * (self.temporal_kernel - 1)

    def validate(self, T: int | None = None) -> None:
        if self.temporal_kernel < 1 or self.spatial_kernel < 1 or self.layers < 1:
            raise ValidationError(f"kernels and layer count must be >= 1: {self}")
        if T is not None and self.output_length(T) < 1:
            raise ShapeError(
                f"window length {T} too short for {self.layers} sandwich layers "
                f"with temporal kernel {self.temporal_kernel}"
            )


def normalized_adjacency(adjacency) -> torch.Tensor:
    """D^-1/2 (A + I) D^-1/2."""
    a = torch.as_tensor(np.asarray(adjacency), dtype=torch.float64)
    a = a + torch.eye(a.shape[0], dtype=a.dtype)
    inv_sqrt = a.sum(dim=1).rsqrt()
    return inv_sqrt[:, None] * a * inv_sqrt[None, :]


class TemporalConv(nn.Module):
    """Valid 1-D convolution along time with a gated linear unit.

    Output step ``t`` sees input steps ``t .. t + K_t - 1``, so the window
    shrinks by ``K_t - 1`` and nothing past the window end leaks in. The
    kernel is stored as one linear map over the stacked taps: columns
    ``k * c_in .. (k + 1) * c_in`` weight tap ``k``.
    """

    def __init__(self, c_in: int, c_out: int, kernel: int, gated: bool = True):
        super().__init__()
        self.kernel = kernel
        self.c_out = c_out
        self.gated = gated
        self.proj = nn.Linear(kernel * c_in, 2 * c_out if gated else c_out)

    def pre_activation(self, x: torch.Tensor) -> torch.Tensor:
        T = x.shape[1]
        if T < self.kernel:
            raise ShapeError(f"sequence length {T} < temporal kernel {self.kernel}")
        T_out = T - self.kernel + 1
        taps = torch.cat([x[:, k:k + T_out] for k in range(self.kernel)], dim=-1)
        return self.proj(taps)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.pre_activation(x)
        if not self.gated:
            return out
        p, q = out.split(self.c_out, dim=-1)
        return p * torch.sigmoid(q)


class GraphConv(nn.Module):
    """Polynomial message passing: ``act(sum_k Â^k h W_k + b)`` for k = 1..K_s."""

    def __init__(self, c_in: int, c_out: int, hops: int, adjacency, activation: str = "relu"):
        super().__init__()
        self.register_buffer("a_hat", normalized_adjacency(adjacency).float())
        bound = 1.0 / math.sqrt(c_in * hops)
        self.weights = nn.ParameterList(
            nn.Parameter(torch.empty(c_in, c_out).uniform_(-bound, bound)) for _ in range(hops)
        )
        self.bias = nn.Parameter(torch.empty(c_out).uniform_(-bound, bound))
        self.activation = activation

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        if h.shape[-2] != self.a_hat.shape[0]:
            raise ShapeError(f"features have {h.shape[-2]} nodes, adjacency has {self.a_hat.shape[0]}")
        a_hat = self.a_hat.to(h.dtype)
        out = self.bias
        prop = h
        for w in self.weights:
            prop = torch.einsum("nm,...mc->...nc", a_hat, prop)
            out = out + prop @ w
        if self.activation == "relu":
            return torch.relu(out)
        if self.activation == "linear":
            return out
        raise ValueError(f"unknown activation {self.activation!r}")


class SandwichBlock(nn.Module):
    def __init__(self, c_in: int, cfg: TsrlConfig, adjacency):
        super().__init__()
        D = cfg.hidden_dim
        self.tcl_in = TemporalConv(c_in, D, cfg.temporal_kernel)
        self.gcl = GraphConv(D, D, cfg.spatial_kernel, adjacency)
        self.tcl_out = TemporalConv(D, D, cfg.temporal_kernel)
        # per-node normalisation keeps node-permutation equivariance
        self.norm = nn.LayerNorm(D)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.norm(self.tcl_out(self.gcl(self.tcl_in(x))))


class TSRL(nn.Module):
    """``[B, T, N, d] -> [B, T - 2L(K_t - 1), N, D]``."""

    def __init__(self, cfg: TsrlConfig, adjacency):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        blocks = []
        c_in = cfg.input_channels
        for _ in range(cfg.layers):
            blocks.append(SandwichBlock(c_in, cfg, adjacency))
            c_in = cfg.hidden_dim
        self.blocks = nn.Sequential(*blocks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.cfg.validate(x.shape[1])
        return self.blocks(x)
