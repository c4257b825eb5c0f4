"""Classic gravity model and a deep feed-forward comparator.

The gravity baseline fits the four-scalar law by log-space least squares on
pooled training cities, using attribute 0 as the population proxy and
haversine distance between region centroids.  The deep comparator maps the
concatenated pair (x_i || x_j || distance) through a deep MLP to a
non-negative flow, trained by squared error on log1p flows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .core import City, ODNetwork, scaled_attributes
from .exceptions import DataFormatError
from .gravity import GravityParams, _design_rows, solve_gravity_ols

EARTH_RADIUS_KM = 6371.0088
MIN_DISTANCE_KM = 0.1
MIN_FIT_PAIRS = 5


def haversine_km(lon: np.ndarray, lat: np.ndarray) -> np.ndarray:
    """Pairwise great-circle distances in km, clamped at MIN_DISTANCE_KM."""
    lon_r, lat_r = np.radians(lon), np.radians(lat)
    dlat = lat_r[:, None] - lat_r[None, :]
    dlon = lon_r[:, None] - lon_r[None, :]
    h = np.sin(dlat / 2) ** 2 + np.cos(lat_r)[:, None] * np.cos(lat_r)[None, :] * np.sin(dlon / 2) ** 2
    d = 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    return np.maximum(d, MIN_DISTANCE_KM)


def _city_geometry(city: City) -> tuple[np.ndarray, np.ndarray]:
    pops = city.attribute_matrix[:, 0]
    if np.any(pops <= 0):
        raise DataFormatError("gravity baseline needs positive populations (attribute 0)")
    lon = np.array([r.lon for r in city.regions])
    lat = np.array([r.lat for r in city.regions])
    return pops, haversine_km(lon, lat)


def gravity_baseline_fit(cities: Sequence[City]) -> GravityParams:
    """Pooled log-OLS fit of the gravity law over all training cities.

    Zero-flow pairs are excluded (their logarithm is undefined), which is
    the classic calibration recipe and also its classic weakness on sparse
    count data.
    """
    rows_x, rows_y = [], []
    for city in cities:
        if city.od is None:
            raise DataFormatError("gravity baseline needs cities with an OD network")
        pops, dists = _city_geometry(city)
        x, y = _design_rows(city.od.flows, pops, dists)
        rows_x.append(x)
        rows_y.append(y)
    x = np.concatenate(rows_x)
    y = np.concatenate(rows_y)
    if x.shape[0] < MIN_FIT_PAIRS:
        raise DataFormatError(f"need at least {MIN_FIT_PAIRS} positive pairs, got {x.shape[0]}")
    return solve_gravity_ols(x, y)


def gravity_baseline_predict(city: City, params: GravityParams) -> ODNetwork:
    """Apply fitted gravity scalars to a city's populations and geography."""
    pops, dists = _city_geometry(city)
    with np.errstate(over="raise"):
        flows = np.exp(
            params.log_g
            + params.lambda1 * np.log(pops)[:, None]
            + params.lambda2 * np.log(pops)[None, :]
            - params.lambda3 * np.log(dists)
        )
    np.fill_diagonal(flows, 0.0)
    return ODNetwork(flows=flows)


@dataclass(frozen=True)
class DeepGravityConfig:
    hidden_layers: int = 15
    width: int = 64
    epochs: int = 300
    lr: float = 1e-3
    seed: int = 0


class DeepGravityModel(nn.Module):
    """Feed-forward pairwise flow regressor with a softplus output."""

    def __init__(self, attr_dim: int, cfg: DeepGravityConfig | None = None):
        super().__init__()
        self.cfg = cfg or DeepGravityConfig()
        self.attr_dim = attr_dim
        self.trained = False
        layers: list[nn.Module] = []
        in_dim = 2 * attr_dim + 1
        for _ in range(self.cfg.hidden_layers):
            layers += [nn.Linear(in_dim, self.cfg.width), nn.LeakyReLU(0.1)]
            in_dim = self.cfg.width
        layers.append(nn.Linear(in_dim, 1))
        self.net = nn.Sequential(*layers)

    @property
    def hidden_layer_count(self) -> int:
        return sum(1 for m in self.net if isinstance(m, nn.Linear)) - 1

    def forward(self, pairs: torch.Tensor) -> torch.Tensor:
        return nn.functional.softplus(self.net(pairs)).squeeze(-1)


def _pair_features(city: City) -> tuple[torch.Tensor, np.ndarray, np.ndarray]:
    """(pair feature matrix, origin idx, dest idx) for all ordered off-diagonal pairs."""
    n = city.n_regions
    feats = scaled_attributes(city.attribute_matrix)
    lon = np.array([r.lon for r in city.regions])
    lat = np.array([r.lat for r in city.regions])
    dists = haversine_km(lon, lat)
    scaled_d = np.log1p(dists) / np.log1p(dists.max())
    i, j = np.nonzero(~np.eye(n, dtype=bool))
    x = np.concatenate([feats[i], feats[j], scaled_d[i, j][:, None]], axis=1)
    return torch.as_tensor(x, dtype=torch.float32), i, j


def train_deep_gravity(
    cities: Sequence[City], attr_dim: int | None = None, cfg: DeepGravityConfig | None = None
) -> DeepGravityModel:
    """Fit the deep comparator by full-batch Adam on pooled pair regressions."""
    cfg = cfg or DeepGravityConfig()
    if not cities:
        raise DataFormatError("need at least one training city")
    attr_dim = cities[0].attr_dim if attr_dim is None else attr_dim
    xs, ys = [], []
    for city in cities:
        if city.od is None:
            raise DataFormatError("deep gravity needs cities with an OD network")
        x, i, j = _pair_features(city)
        xs.append(x)
        ys.append(torch.as_tensor(np.log1p(city.od.flows[i, j]), dtype=torch.float32))
    x = torch.cat(xs)
    y = torch.cat(ys)

    torch.manual_seed(cfg.seed)
    model = DeepGravityModel(attr_dim, cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    for _ in range(cfg.epochs):
        opt.zero_grad(set_to_none=True)
        loss = torch.mean((torch.log1p(model(x)) - y) ** 2)
        loss.backward()
        opt.step()
    model.trained = True
    return model


def deep_gravity_predict(city: City, model: DeepGravityModel) -> ODNetwork:
    """Predict all ordered pair flows for a city with a trained model."""
    if not model.trained:
        raise DataFormatError("deep gravity model has not been trained")
    if city.attr_dim != model.attr_dim:
        raise DataFormatError(
            f"city attribute dim {city.attr_dim} != model attribute dim {model.attr_dim}"
        )
    x, i, j = _pair_features(city)
    n = city.n_regions
    with torch.no_grad():
        pred = model(x).numpy().astype(float)
    flows = np.zeros((n, n))
    flows[i, j] = pred
    return ODNetwork(flows=flows)
