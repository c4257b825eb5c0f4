"""Domain types shared by all modules and elementary OD-network queries.

All types are immutable after construction (backing arrays are frozen), so
they can be shared across parallel workers without synchronization.

Conventions used everywhere:
  * region order is the file order of the region table and is the canonical
    index for attributes, transport adjacencies and OD matrices;
  * flows[i][j] is the flow from origin i to destination j;
  * intra-region (diagonal) flows may be stored but are excluded from
    metrics and walk sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import DataFormatError, DegenerateNetworkError


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Region:
    """A spatial unit of a city: id, coordinates (degrees) and an attribute vector."""

    id: str
    lon: float
    lat: float
    attributes: np.ndarray

    def __post_init__(self):
        attrs = _frozen(self.attributes, float)
        if attrs.ndim != 1:
            raise DataFormatError(f"region {self.id}: attributes must be a vector")
        if not np.all(np.isfinite(attrs)):
            raise DataFormatError(f"region {self.id}: non-finite attribute value")
        object.__setattr__(self, "attributes", attrs)


def _check_adjacency(name: str, adj: np.ndarray) -> np.ndarray:
    adj = _frozen(adj, bool)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise DataFormatError(f"{name} adjacency must be square, got {adj.shape}")
    if not np.array_equal(adj, adj.T):
        raise DataFormatError(f"{name} adjacency is not symmetric")
    if not np.all(np.diagonal(adj)):
        raise DataFormatError(f"{name} adjacency is missing self-loops")
    return adj


@dataclass(frozen=True, eq=False)
class TransportGraphSet:
    """Boolean adjacencies for the three transport modes, one node per region.

    All three share the same node ordering, are symmetric and carry
    self-loops (so attention over a neighbor set is always well-defined).
    """

    ngb: np.ndarray
    bus: np.ndarray
    rail: np.ndarray

    def __post_init__(self):
        for name in ("ngb", "bus", "rail"):
            object.__setattr__(self, name, _check_adjacency(name, getattr(self, name)))
        if not (self.ngb.shape == self.bus.shape == self.rail.shape):
            raise DataFormatError("transport adjacencies disagree on size")

    @property
    def n_regions(self) -> int:
        return self.ngb.shape[0]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"ngb": self.ngb, "bus": self.bus, "rail": self.rail}


@dataclass(frozen=True, eq=False)
class ODNetwork:
    """Directed weighted network over regions; flows is its adjacency matrix."""

    flows: np.ndarray

    def __post_init__(self):
        flows = _frozen(self.flows, float)
        if flows.ndim != 2 or flows.shape[0] != flows.shape[1]:
            raise DataFormatError(f"OD matrix must be square, got {flows.shape}")
        if not np.all(np.isfinite(flows)):
            raise DataFormatError("OD matrix contains non-finite values")
        if np.any(flows < 0):
            raise DataFormatError("OD matrix contains negative flows")
        object.__setattr__(self, "flows", flows)

    @property
    def n_regions(self) -> int:
        return self.flows.shape[0]


@dataclass(frozen=True, eq=False)
class City:
    """Regions, transport topology and (for training cities) a real OD network."""

    regions: Sequence[Region]
    transport: TransportGraphSet
    od: Optional[ODNetwork] = None
    attribute_matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        regions = tuple(self.regions)
        if not regions:
            raise DataFormatError("a city needs at least one region")
        ids = [r.id for r in regions]
        if len(set(ids)) != len(ids):
            raise DataFormatError("duplicate region ids")
        dims = {r.attributes.shape[0] for r in regions}
        if len(dims) != 1:
            raise DataFormatError(f"attribute dimension differs across regions: {sorted(dims)}")
        n = len(regions)
        if self.transport.n_regions != n:
            raise DataFormatError(
                f"transport graphs have {self.transport.n_regions} nodes but city has {n} regions"
            )
        if self.od is not None and self.od.n_regions != n:
            raise DataFormatError(
                f"OD network has {self.od.n_regions} nodes but city has {n} regions"
            )
        object.__setattr__(self, "regions", regions)
        object.__setattr__(
            self, "attribute_matrix", _frozen(np.stack([r.attributes for r in regions]), float)
        )

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    @property
    def attr_dim(self) -> int:
        return self.regions[0].attributes.shape[0]

    @property
    def region_ids(self) -> list[str]:
        return [r.id for r in self.regions]

    def index_of(self) -> dict[str, int]:
        return {r.id: i for i, r in enumerate(self.regions)}


def out_flow(net: ODNetwork, i: int) -> float:
    """Total flow leaving region i, excluding the intra-region diagonal."""
    n = net.n_regions
    if not 0 <= i < n:
        raise IndexError(f"region index {i} out of range for {n} regions")
    return float(net.flows[i].sum() - net.flows[i, i])


def flow_distribution(net: ODNetwork) -> np.ndarray:
    """Off-diagonal flows normalized to a probability vector over the N*N cells.

    Diagonal cells map to zero.  Raises on an all-zero network.
    """
    masked = net.flows.copy()
    np.fill_diagonal(masked, 0.0)
    total = masked.sum()
    if total <= 0:
        raise DegenerateNetworkError("degenerate OD network")
    return (masked / total).ravel()


def scaled_attributes(attrs: np.ndarray) -> np.ndarray:
    """Signed-log compression of raw attribute columns into [-1, 1].

    Census-style magnitudes (populations in the thousands next to unit-scale
    indicators) destabilize both attention logits and the critic, so every
    consumer of attributes-as-features (encoder input, walk steps) goes
    through this one transform: sign(x) * log1p(|x|), scaled per column by
    its maximum absolute value over the city's regions.
    """
    attrs = np.asarray(attrs, dtype=float)
    logs = np.sign(attrs) * np.log1p(np.abs(attrs))
    peak = np.abs(logs).max(axis=0)
    return logs / np.maximum(peak, 1e-12)
