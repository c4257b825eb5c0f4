"""Gravity-law decoder: region embeddings -> full OD matrix.

The embedding row splits into a positive scalar mass (softplus of the first
coordinate) and a latent location (the remaining d-1 coordinates); pairwise
flow is G * m_i^l1 * m_j^l2 / r_ij^l3 with r the clamped Euclidean distance
between latent locations.  The four scalars (logG, l1, l2, l3) are learnable
and shared across cities during adversarial training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .exceptions import DataFormatError, GravityOverflowError

MASS_EPS = 1e-6
DIST_EPS = 1e-3


@dataclass(frozen=True)
class GravityParams:
    """The four decoder scalars; G = exp(log_g) is positive by construction."""

    log_g: float
    lambda1: float
    lambda2: float
    lambda3: float

    @property
    def g(self) -> float:
        return float(np.exp(self.log_g))


@dataclass(frozen=True, eq=False)
class RegionEmbeddings:
    """Mass/location split of an embedding matrix, one row per region."""

    mass: torch.Tensor      # (N,), strictly positive
    location: torch.Tensor  # (N, d-1)

    @property
    def n_regions(self) -> int:
        return self.mass.shape[0]


def split_embedding(embeddings: torch.Tensor) -> RegionEmbeddings:
    """Column 0 becomes mass via softplus (+ floor); the rest is the location."""
    if embeddings.ndim != 2 or embeddings.shape[1] < 2:
        raise DataFormatError("embedding matrix must be N x d with d >= 2")
    mass = torch.nn.functional.softplus(embeddings[:, 0]) + MASS_EPS
    return RegionEmbeddings(mass=mass, location=embeddings[:, 1:])


class GravityDecoder(nn.Module):
    """Learnable gravity scalars applied to a mass/location split."""

    def __init__(self, params: GravityParams | None = None):
        super().__init__()
        p = params or GravityParams(log_g=0.0, lambda1=1.0, lambda2=1.0, lambda3=1.0)
        self.log_g = nn.Parameter(torch.tensor(float(p.log_g)))
        self.lambda1 = nn.Parameter(torch.tensor(float(p.lambda1)))
        self.lambda2 = nn.Parameter(torch.tensor(float(p.lambda2)))
        self.lambda3 = nn.Parameter(torch.tensor(float(p.lambda3)))

    def as_params(self) -> GravityParams:
        return GravityParams(
            log_g=float(self.log_g),
            lambda1=float(self.lambda1),
            lambda2=float(self.lambda2),
            lambda3=float(self.lambda3),
        )

    def forward(self, embs: RegionEmbeddings) -> torch.Tensor:
        return predict_flows(embs, self)


def pairwise_distances(location: torch.Tensor) -> torch.Tensor:
    """Euclidean distances between latent locations, clamped at DIST_EPS."""
    diff = location[:, None, :] - location[None, :, :]
    sq = diff.pow(2).sum(-1)
    # clamp before the sqrt so coincident locations keep a finite gradient
    return sq.clamp_min(DIST_EPS**2).sqrt()


def predict_flows(embs: RegionEmbeddings, decoder: GravityDecoder) -> torch.Tensor:
    """Dense OD matrix from the gravity law; diagonal zero, all entries finite."""
    if torch.any(embs.mass <= 0):
        raise DataFormatError("masses must be strictly positive")
    r = pairwise_distances(embs.location)
    log_m = torch.log(embs.mass)
    log_t = (
        decoder.log_g
        + decoder.lambda1 * log_m[:, None]
        + decoder.lambda2 * log_m[None, :]
        - decoder.lambda3 * torch.log(r)
    )
    flows = torch.exp(log_t)
    n = flows.shape[0]
    flows = flows * (1.0 - torch.eye(n, dtype=flows.dtype, device=flows.device))
    if not torch.isfinite(flows).all():
        raise GravityOverflowError("gravity overflow")
    return flows


def _design_rows(
    flows: np.ndarray, masses: np.ndarray, dists: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Log-space regression rows for the off-diagonal pairs with positive flow."""
    flows = np.asarray(flows, dtype=float)
    masses = np.asarray(masses, dtype=float)
    dists = np.asarray(dists, dtype=float)
    n = flows.shape[0]
    if np.any(masses <= 0):
        raise DataFormatError("masses must be strictly positive")
    if np.any(dists[~np.eye(n, dtype=bool)] <= 0):
        raise DataFormatError("distances must be strictly positive off the diagonal")
    i, j = np.nonzero(~np.eye(n, dtype=bool) & (flows > 0))
    x = np.column_stack(
        [np.ones(i.size), np.log(masses[i]), np.log(masses[j]), -np.log(dists[i, j])]
    )
    y = np.log(flows[i, j])
    return x, y


def fit_decoder_logspace(
    flows: np.ndarray, masses: np.ndarray, dists: np.ndarray
) -> GravityParams:
    """Ordinary least squares of log T on (1, log m_i, log m_j, -log r_ij).

    Only off-diagonal pairs with strictly positive flow enter the fit.
    """
    x, y = _design_rows(flows, masses, dists)
    return solve_gravity_ols(x, y)


def solve_gravity_ols(x: np.ndarray, y: np.ndarray) -> GravityParams:
    """Least-squares solve of stacked design rows; raises on a singular design.

    The fully degenerate case (constant masses and constant distances) is
    still well-defined: the law reduces to its prefactor, so the exponents
    are pinned to zero and G carries the mean flow.
    """
    if x.shape[0] < 4:
        raise DataFormatError(f"need at least 4 positive pairs, got {x.shape[0]}")
    if np.all(np.ptp(x[:, 1:], axis=0) == 0):
        return GravityParams(log_g=float(np.mean(y)), lambda1=0.0, lambda2=0.0, lambda3=0.0)
    coeffs, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    if rank < 4:
        raise DataFormatError("singular design matrix in gravity fit")
    return GravityParams(
        log_g=float(coeffs[0]),
        lambda1=float(coeffs[1]),
        lambda2=float(coeffs[2]),
        lambda3=float(coeffs[3]),
    )
