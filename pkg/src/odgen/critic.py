"""Sequence critic: dilated causal 1-D convolutions over walk features.

The stack reads a (B, L, A+1) batch of walk sequences and emits one
unbounded real score per sequence (no output nonlinearity; the Wasserstein
objective needs the raw value).  The readout uses the last time step, whose
receptive field is checked to cover the whole sequence.

Blocks are residual pairs of causal convolutions with ReLU inside.  Weight
normalization is deliberately not used: the training loop clips every
critic parameter elementwise, and a g/v parametrization would turn that
clip into something other than a bound on the effective weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .exceptions import DataFormatError


@dataclass(frozen=True)
class TcnConfig:
    in_dim: int
    seq_len: int = 16
    channels: int = 64
    kernel_size: int = 3
    dilations: tuple[int, ...] = (1, 2, 4, 8)
    init_range: float = 0.01

    @property
    def receptive_field(self) -> int:
        return 1 + sum(2 * (self.kernel_size - 1) * d for d in self.dilations)


class CausalConv(nn.Module):
    """1-D convolution padded on the left so step t never sees steps > t."""

    def __init__(self, in_ch: int, out_ch: int, kernel_size: int, dilation: int):
        super().__init__()
        self.pad = (kernel_size - 1) * dilation
        self.conv = nn.Conv1d(in_ch, out_ch, kernel_size, dilation=dilation)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(nn.functional.pad(x, (self.pad, 0)))


class TemporalBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel_size: int, dilation: int):
        super().__init__()
        self.conv1 = CausalConv(in_ch, out_ch, kernel_size, dilation)
        self.conv2 = CausalConv(out_ch, out_ch, kernel_size, dilation)
        self.downsample = nn.Conv1d(in_ch, out_ch, 1) if in_ch != out_ch else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = torch.relu(self.conv1(x))
        out = torch.relu(self.conv2(out))
        res = x if self.downsample is None else self.downsample(x)
        return torch.relu(out + res)


class TcnCritic(nn.Module):
    def __init__(self, cfg: TcnConfig):
        super().__init__()
        if cfg.receptive_field < cfg.seq_len:
            raise DataFormatError(
                f"receptive field {cfg.receptive_field} < sequence length {cfg.seq_len}"
            )
        self.cfg = cfg
        blocks = []
        in_ch = cfg.in_dim
        for d in cfg.dilations:
            blocks.append(TemporalBlock(in_ch, cfg.channels, cfg.kernel_size, d))
            in_ch = cfg.channels
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Linear(cfg.channels, 1)
        self.reset_parameters()

    def reset_parameters(self):
        # start inside the weight-clipping box the WGAN update keeps us in
        r = self.cfg.init_range
        for p in self.parameters():
            nn.init.uniform_(p, -r, r)

    def step_representations(self, batch: torch.Tensor) -> torch.Tensor:
        """Per-step activations after the dilated stack, shape (B, C, L)."""
        if batch.ndim != 3 or batch.shape[1] != self.cfg.seq_len or batch.shape[2] != self.cfg.in_dim:
            raise DataFormatError(
                f"expected (B, {self.cfg.seq_len}, {self.cfg.in_dim}) batch, "
                f"got {tuple(batch.shape)}"
            )
        return self.blocks(batch.transpose(1, 2))

    def forward(self, batch: torch.Tensor) -> torch.Tensor:
        """One unbounded score per sequence, read from the last time step."""
        return self.head(self.step_representations(batch)[:, :, -1]).squeeze(-1)


def score(batch: torch.Tensor, critic: TcnCritic) -> torch.Tensor:
    return critic(batch)
