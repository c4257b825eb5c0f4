"""Multi-view graph attention encoder.

One stack of GAT layers per transport mode (neighborhood, bus, rail); the
three per-region outputs are concatenated and linearly fused into a single
embedding.  Attention is the dense masked-softmax formulation: per head,
score(i, j) = LeakyReLU(theta . [W h_i || W h_j]) restricted to adjacency
edges, normalized over each node's neighbor set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .core import City, scaled_attributes
from .exceptions import DataFormatError

LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class EncoderConfig:
    attr_dim: int
    noise_dim: int = 60
    embed_dim: int = 64
    heads: int = 8
    layers: int = 3

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise DataFormatError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def in_dim(self) -> int:
        return self.attr_dim + self.noise_dim


class GatLayer(nn.Module):
    """One multi-head graph attention layer over a boolean adjacency.

    ``activation`` is applied per head before concatenation (ELU on hidden
    layers, identity on the final layer of a stack).
    """

    def __init__(self, in_dim: int, head_dim: int, heads: int, activation: bool = True):
        super().__init__()
        self.in_dim = in_dim
        self.head_dim = head_dim
        self.heads = heads
        self.activation = activation
        self.weight = nn.Parameter(torch.empty(heads, in_dim, head_dim))
        self.attn = nn.Parameter(torch.empty(heads, 2 * head_dim))
        nn.init.xavier_uniform_(self.weight)
        nn.init.xavier_uniform_(self.attn)

    def forward(self, h: torch.Tensor, adj: torch.Tensor, return_attention: bool = False):
        if h.ndim != 2 or h.shape[1] != self.in_dim:
            raise DataFormatError(f"expected N x {self.in_dim} input, got {tuple(h.shape)}")
        if adj.shape != (h.shape[0], h.shape[0]):
            raise DataFormatError("adjacency shape does not match node count")
        if not bool(adj.any(dim=1).all()):
            missing = (~adj.any(dim=1)).nonzero().flatten().tolist()
            raise DataFormatError(f"nodes with empty neighbor set: {missing}")

        wh = torch.einsum("nf,kfd->knd", h, self.weight)  # (K, N, head_dim)
        src = (wh * self.attn[:, : self.head_dim, None].transpose(1, 2)).sum(-1)  # (K, N)
        dst = (wh * self.attn[:, self.head_dim :, None].transpose(1, 2)).sum(-1)  # (K, N)
        scores = torch.nn.functional.leaky_relu(
            src[:, :, None] + dst[:, None, :], negative_slope=LEAKY_SLOPE
        )
        scores = scores.masked_fill(~adj[None, :, :], float("-inf"))
        alpha = torch.softmax(scores, dim=-1)  # (K, N, N)
        out = torch.matmul(alpha, wh)  # (K, N, head_dim)
        if self.activation:
            out = torch.nn.functional.elu(out)
        out = out.permute(1, 0, 2).reshape(h.shape[0], self.heads * self.head_dim)
        if return_attention:
            return out, alpha
        return out


def _build_stack(cfg: EncoderConfig) -> nn.ModuleList:
    layers = []
    in_dim = cfg.in_dim
    for level in range(cfg.layers):
        last = level == cfg.layers - 1
        layers.append(GatLayer(in_dim, cfg.head_dim, cfg.heads, activation=not last))
        in_dim = cfg.embed_dim
    return nn.ModuleList(layers)


class MultiViewEncoder(nn.Module):
    """Three independent GAT stacks fused by a linear map to the embedding size."""

    MODES = ("ngb", "bus", "rail")

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.stacks = nn.ModuleDict({mode: _build_stack(cfg) for mode in self.MODES})
        self.fuse = nn.Linear(3 * cfg.embed_dim, cfg.embed_dim, bias=False)

    def forward(self, features: torch.Tensor, adjacencies: dict[str, torch.Tensor]) -> torch.Tensor:
        outputs = []
        for mode in self.MODES:
            h = features
            for layer in self.stacks[mode]:
                h = layer(h, adjacencies[mode])
            outputs.append(h)
        return self.fuse(torch.cat(outputs, dim=1))


def city_tensors(city: City, dtype: torch.dtype = torch.float32):
    """Scaled attribute features and boolean adjacency tensors for a city."""
    feats = torch.as_tensor(scaled_attributes(city.attribute_matrix), dtype=dtype)
    adjs = {
        mode: torch.as_tensor(adj) for mode, adj in city.transport.as_dict().items()
    }
    return feats, adjs


def encode(
    city: City,
    noise: np.ndarray | torch.Tensor,
    encoder: MultiViewEncoder,
) -> torch.Tensor:
    """Embed every region of a city: input row = scaled attributes || noise."""
    dtype = next(encoder.parameters()).dtype
    feats, adjs = city_tensors(city, dtype=dtype)
    noise_t = torch.as_tensor(noise, dtype=dtype)
    if noise_t.shape != (city.n_regions, encoder.cfg.noise_dim):
        raise DataFormatError(
            f"noise must be {city.n_regions} x {encoder.cfg.noise_dim}, got {tuple(noise_t.shape)}"
        )
    if city.attr_dim != encoder.cfg.attr_dim:
        raise DataFormatError(
            f"city attribute dim {city.attr_dim} != encoder attr_dim {encoder.cfg.attr_dim}"
        )
    return encoder(torch.cat([feats, noise_t], dim=1), adjs)
