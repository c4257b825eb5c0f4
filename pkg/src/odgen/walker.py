"""Probability-based random walks over OD networks.

Each walk starts uniformly among nodes with positive out-flow and takes L
transitions; the probability of stepping i -> j is the flow share
T_ij / sum_k T_ik over off-diagonal k.  A step emits the destination
region's scaled attributes concatenated with the traversed edge's flow
(log1p, normalized by a per-city constant), so a critic sees both where
the walk went and how heavy the edge was.

Two samplers share this law: a plain numpy one for real (or detached)
networks, and a straight-through Gumbel one that keeps gradients flowing
from the emitted sequences back into generated flow matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .core import City, ODNetwork, scaled_attributes
from .exceptions import AbsorbingNodeError, DegenerateNetworkError

WALK_LENGTH = 16
WALKS_PER_BATCH = 128
GUMBEL_TAU = 0.66
MAX_RESTARTS = 50


@dataclass(frozen=True, eq=False)
class WalkSequence:
    """One sampled walk: per-step feature rows plus the visited node ids."""

    steps: np.ndarray   # (L, A+1): scaled attributes || scaled edge flow
    nodes: np.ndarray   # (L+1,): start node followed by the L destinations
    real: bool          # provenance: sampled from a real network or a generated one


@dataclass(frozen=True, eq=False)
class StWalkBatch:
    """Gradient-carrying batch of walks from a generated network."""

    features: torch.Tensor  # (B, L, A+1), differentiable w.r.t. the flow matrix
    nodes: torch.Tensor     # (B, L+1) long
    real: bool = False


def flow_feature_norm(net: ODNetwork) -> float:
    """Per-city normalizer for the edge-flow feature: log1p of the max flow."""
    off = net.flows.copy()
    np.fill_diagonal(off, 0.0)
    peak = off.max()
    if peak <= 0:
        raise DegenerateNetworkError("degenerate OD network")
    return float(np.log1p(peak))


def transition_probs(net: ODNetwork, i: int) -> np.ndarray:
    """Next-node distribution from region i: flow shares over off-diagonal edges."""
    n = net.n_regions
    if not 0 <= i < n:
        raise IndexError(f"region index {i} out of range for {n} regions")
    row = net.flows[i].copy()
    row[i] = 0.0
    total = row.sum()
    if total <= 0:
        raise AbsorbingNodeError(f"absorbing node: region {i} has zero out-flow")
    return row / total


def sample_walks(
    net: ODNetwork,
    city: City,
    n_walks: int,
    length: int = WALK_LENGTH,
    rng: np.random.Generator | int | None = None,
    flow_norm: float | None = None,
    real: bool = True,
) -> list[WalkSequence]:
    """Sample flow-weighted random walks; deterministic given the rng state.

    A walk that lands on an absorbing node before completing its L steps is
    restarted from a fresh uniform start (at most MAX_RESTARTS times).
    """
    if n_walks == 0:
        return []
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    flows = net.flows
    n = net.n_regions
    off = flows.copy()
    np.fill_diagonal(off, 0.0)
    row_sums = off.sum(axis=1)
    walkable = row_sums > 0
    if not walkable.any():
        raise DegenerateNetworkError("no region has positive out-flow")
    cum = np.cumsum(np.where(walkable[:, None], off / np.where(walkable, row_sums, 1.0)[:, None], 0.0), axis=1)
    walkable_idx = np.nonzero(walkable)[0]

    feats = scaled_attributes(city.attribute_matrix)
    a = feats.shape[1]
    norm = flow_feature_norm(net) if flow_norm is None else float(flow_norm)

    steps_out = np.zeros((n_walks, length, a + 1))
    nodes = np.empty((n_walks, length + 1), dtype=np.int64)
    state = walkable_idx[rng.integers(walkable_idx.size, size=n_walks)]
    nodes[:, 0] = state
    step = np.zeros(n_walks, dtype=np.int64)
    restarts = np.zeros(n_walks, dtype=np.int64)

    while True:
        active = step < length
        if not active.any():
            break
        rows = np.nonzero(active)[0]
        u = rng.random(rows.size)
        nxt = np.minimum((cum[state[rows]] < u[:, None]).sum(axis=1), n - 1)
        taken = flows[state[rows], nxt]
        t = step[rows]
        steps_out[rows, t, :a] = feats[nxt]
        steps_out[rows, t, a] = np.log1p(taken) / norm
        nodes[rows, t + 1] = nxt
        state[rows] = nxt
        step[rows] = t + 1

        stuck = (step < length) & ~walkable[state]
        if stuck.any():
            restarts[stuck] += 1
            if np.any(restarts > MAX_RESTARTS):
                bad = int(np.nonzero(restarts > MAX_RESTARTS)[0][0])
                raise AbsorbingNodeError(
                    f"walk {bad} hit absorbing nodes more than {MAX_RESTARTS} times"
                )
            fresh = walkable_idx[rng.integers(walkable_idx.size, size=int(stuck.sum()))]
            state[stuck] = fresh
            nodes[stuck, 0] = fresh
            step[stuck] = 0

    return [
        WalkSequence(steps=steps_out[b], nodes=nodes[b], real=real) for b in range(n_walks)
    ]


def stack_walks(walks: list[WalkSequence], dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Batch a list of walks into a (B, L, A+1) tensor for the critic."""
    return torch.as_tensor(np.stack([w.steps for w in walks]), dtype=dtype)


def sample_walks_st(
    flows: torch.Tensor,
    features: torch.Tensor,
    n_walks: int,
    length: int = WALK_LENGTH,
    generator: torch.Generator | None = None,
    tau: float = GUMBEL_TAU,
    flow_norm: float | None = None,
) -> StWalkBatch:
    """Straight-through Gumbel walk sampling on a generated flow matrix.

    The forward pass takes hard one-hot steps (identical in law to
    ``sample_walks``); the backward pass relaxes each choice to the
    softmax at temperature ``tau``.  The emitted flow scalar is the inner
    product of the one-hot choice with the current flow row, so gradients
    reach the generated flows through both the choice and the feature.
    """
    n = flows.shape[0]
    if flows.shape != (n, n):
        raise DegenerateNetworkError(f"flow matrix must be square, got {tuple(flows.shape)}")
    eye = torch.eye(n, dtype=torch.bool, device=flows.device)
    off = flows.masked_fill(eye, 0.0)
    row_sums = off.sum(dim=1)
    with torch.no_grad():
        walkable = row_sums > 0
    if not bool(walkable.any()):
        raise DegenerateNetworkError("no region has positive out-flow")

    probs = off / row_sums.clamp_min(1e-30)[:, None]
    neg_inf = torch.tensor(float("-inf"), dtype=flows.dtype, device=flows.device)
    log_p = torch.where(probs > 0, torch.log(probs.clamp_min(1e-30)), neg_inf)
    # keep walks inside the walkable set so no batch element can get stuck
    log_p = log_p.masked_fill(~walkable[None, :], float("-inf"))
    with torch.no_grad():
        viable = walkable & (log_p > float("-inf")).any(dim=1)
        if not torch.equal(viable, walkable):
            raise DegenerateNetworkError("walkable region has only absorbing successors")

    if flow_norm is None:
        norm = float(torch.log1p(off.detach().max()))
    else:
        norm = float(flow_norm)

    walkable_idx = torch.nonzero(walkable).flatten()
    start_pick = torch.randint(
        walkable_idx.numel(), (n_walks,), generator=generator, device=flows.device
    )
    state = walkable_idx[start_pick]
    nodes = [state]
    step_feats = []
    for _ in range(length):
        logits = log_p[state]  # (B, N)
        u = torch.rand(n_walks, n, generator=generator, device=flows.device, dtype=flows.dtype)
        gumbel = -torch.log(-torch.log(u.clamp_min(1e-20)).clamp_min(1e-20))
        y_soft = torch.softmax((logits + gumbel) / tau, dim=1)
        idx = y_soft.argmax(dim=1)
        y_hard = torch.nn.functional.one_hot(idx, n).to(flows.dtype)
        y = y_hard + (y_soft - y_soft.detach())
        taken = (y * flows[state]).sum(dim=1)
        attr_part = y @ features
        flow_part = torch.log1p(taken) / norm
        step_feats.append(torch.cat([attr_part, flow_part[:, None]], dim=1))
        state = idx
        nodes.append(state)

    return StWalkBatch(
        features=torch.stack(step_feats, dim=1),
        nodes=torch.stack(nodes, dim=1),
        real=False,
    )
