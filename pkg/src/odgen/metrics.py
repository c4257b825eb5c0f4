"""Evaluation metrics for generated OD networks.

All three network metrics use off-diagonal cells only, matching the
convention that intra-region flow is out of scope.  ``f_jsd`` ships in two
modes: the default reproduces the divergence exactly as published
(asymmetric second KL term, KL(P_M || P_real)); ``standard=True`` computes
the textbook Jensen-Shannon divergence instead.
"""

from __future__ import annotations

import math

import numpy as np

from .core import ODNetwork, flow_distribution
from .exceptions import DataFormatError


def _check_shapes(real: ODNetwork, fake: ODNetwork) -> int:
    if real.flows.shape != fake.flows.shape:
        raise DataFormatError(
            f"shape mismatch: real {real.flows.shape} vs generated {fake.flows.shape}"
        )
    return real.n_regions


def _offdiag(net: ODNetwork) -> np.ndarray:
    n = net.n_regions
    mask = ~np.eye(n, dtype=bool)
    return net.flows[mask]


def cpc(real: ODNetwork, fake: ODNetwork) -> float:
    """Common Part of Commuters: 2*sum(min) / (sum(fake) + sum(real)), in [0, 1]."""
    _check_shapes(real, fake)
    t, t_hat = _offdiag(real), _offdiag(fake)
    denom = t.sum() + t_hat.sum()
    if denom <= 0:
        raise DataFormatError("cannot compute CPC of two all-zero networks")
    return float(2.0 * np.minimum(t, t_hat).sum() / denom)


def rmse(real: ODNetwork, fake: ODNetwork) -> float:
    """Root mean squared error over the N*(N-1) off-diagonal cells."""
    _check_shapes(real, fake)
    diff = _offdiag(real) - _offdiag(fake)
    return float(np.sqrt(np.mean(diff**2)))


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p||q) in nats with 0*log(0/q) = 0; +inf when q=0 on support of p."""
    support = p > 0
    if np.any(q[support] == 0):
        return math.inf
    return float(np.sum(p[support] * np.log(p[support] / q[support])))


def f_jsd(real: ODNetwork, fake: ODNetwork, standard: bool = False) -> float:
    """Root of a Jensen-Shannon-style divergence between flow distributions.

    Default mode: sqrt((KL(P_fake||P_M) + KL(P_M||P_real)) / 2) with
    P_M the elementwise mean, exactly as published.  The second term is
    +inf whenever the real distribution has a zero cell where P_M > 0;
    the returned +inf is the flag for that case.  ``standard=True``
    computes sqrt(JSD) = sqrt((KL(P_fake||P_M) + KL(P_real||P_M)) / 2),
    which is always finite.
    """
    _check_shapes(real, fake)
    p_real = flow_distribution(real)
    p_fake = flow_distribution(fake)
    p_mid = 0.5 * (p_real + p_fake)
    first = _kl(p_fake, p_mid)
    second = _kl(p_real, p_mid) if standard else _kl(p_mid, p_real)
    if math.isinf(second):
        return math.inf
    return math.sqrt(0.5 * (first + second))


def mass_correlation(
    masses: np.ndarray,
    reference: np.ndarray,
    populations: np.ndarray | None = None,
) -> float:
    """Pearson correlation between learned masses and a reference quantity.

    ``reference`` is typically the population or total-POI vector.  Regions
    with zero population are excluded as noise (pass ``populations`` when
    ``reference`` is not itself the population vector).
    """
    masses = np.asarray(masses, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if masses.shape != reference.shape or masses.ndim != 1:
        raise DataFormatError("masses and reference must be equal-length vectors")
    pops = reference if populations is None else np.asarray(populations, dtype=float)
    keep = pops != 0
    masses, reference = masses[keep], reference[keep]
    if masses.size < 3:
        raise DataFormatError("need at least 3 regions after filtering")
    if np.ptp(masses) == 0 or np.ptp(reference) == 0:
        raise DataFormatError("constant input has no defined correlation")
    return float(np.corrcoef(masses, reference)[0, 1])
