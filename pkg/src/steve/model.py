"""The full forecaster: dual encoders, self-supervision heads, priors and prediction heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .deconfound import DualEncoder, NodePooler, ReprPair, SslHeads, VariationalNet
from .head import PredictionHead, PriorNet, mix
from .tsrl import TsrlConfig


@dataclass(frozen=True)
class ModelConfig:
    num_nodes: int
    channels: int = 1
    window: int = 11
    hidden_dim: int = 32
    temporal_kernel: int = 3
    spatial_kernel: int = 3
    layers: int = 2
    grl_eta: float = 1.0
    seed: int = 0

    @property
    def tsrl(self) -> TsrlConfig:
        return TsrlConfig(self.channels, self.hidden_dim, self.temporal_kernel, self.spatial_kernel, self.layers)

    @property
    def t_out(self) -> int:
        return self.tsrl.output_length(self.window)


@dataclass
class ForwardOutput:
    pair: ReprPair
    alpha: torch.Tensor  # [B, 2]
    h1: torch.Tensor  # [B, N, F]
    h2: torch.Tensor
    y_hat: torch.Tensor


class STEVE(nn.Module):
    def __init__(self, cfg: ModelConfig, adjacency):
        super().__init__()
        cfg.tsrl.validate(cfg.window)
        self.cfg = cfg
        D = cfg.hidden_dim
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            self.encoder = DualEncoder(cfg.tsrl, adjacency)
            self.pooler = NodePooler(D, cfg.t_out)
            self.ssl = SslHeads(D, D, cfg.num_nodes, cfg.channels)
            self.prior = PriorNet(D)
            self.head_i = PredictionHead(D, cfg.t_out, cfg.channels)
            self.head_v = PredictionHead(D, cfg.t_out, cfg.channels)
            self.q = VariationalNet(D, D)
        self.register_buffer("input_loc", torch.zeros(cfg.channels))
        self.register_buffer("input_scale", torch.ones(cfg.channels))

    def set_scaler(self, loc, scale) -> None:
        """Standardise inputs with per-channel ``loc``/``scale``; heads map back to flow units."""
        loc = torch.as_tensor(np.asarray(loc), dtype=self.input_loc.dtype)
        scale = torch.as_tensor(np.asarray(scale), dtype=self.input_loc.dtype).clamp_min(1e-6)
        for buf_loc, buf_scale in ((self.input_loc, self.input_scale),
                                   (self.head_i.loc, self.head_i.scale),
                                   (self.head_v.loc, self.head_v.scale)):
            buf_loc.copy_(loc)
            buf_scale.copy_(scale)

    def main_parameters(self):
        """Everything the forecasting objective updates; the variational net is trained separately."""
        return [p for name, p in self.named_parameters() if not name.startswith("q.")]

    def encode(self, x: torch.Tensor) -> ReprPair:
        return self.encoder((x - self.input_loc) / self.input_scale)

    def forward(self, x: torch.Tensor) -> ForwardOutput:
        pair = self.encode(x)
        alpha = self.prior(pair)
        h1, h2 = self.head_i(pair.z_i), self.head_v(pair.z_v)
        return ForwardOutput(pair, alpha, h1, h2, mix(alpha, h1, h2))

    @property
    def dtype(self) -> torch.dtype:
        return self.input_loc.dtype

    # checkpoints: named tensors in an .npz container at the training precision

    def save_checkpoint(self, path) -> None:
        state = {k: v.detach().cpu().numpy() for k, v in self.state_dict().items()}
        with open(path, "wb") as fh:
            np.savez(fh, **state)

    def load_checkpoint(self, path) -> None:
        with np.load(Path(path)) as data:
            state = {k: torch.from_numpy(data[k]).to(self.dtype) for k in data.files}
        self.load_state_dict(state)

    def config_dict(self) -> dict:
        return asdict(self.cfg)
