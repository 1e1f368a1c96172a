"""
Empirical value-at-risk and conditional value-at-risk.

Conventions, for K losses sorted ascending as l_(1) <= ... <= l_(K):

- VaR at level α is the ⌈(1-α)K⌉-th order statistic (the first one for α=1).
- CVaR is the minimum over β of β + (1/(αK)) Σ [l_k - β]₊. The minimum is
  attained at an order statistic, and the smallest minimizer is exactly the
  VaR above. This form is the definition for every α in (0, 1].
- The indicator form (mean of the αK largest losses) agrees with it when αK
  is an integer and is used as a fast path only then.
"""

import math
from typing import NamedTuple, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from voltrisk.exceptions import VoltRiskError

Losses = Union[Sequence[float], np.ndarray]

# Slack when testing whether αK is an integer
_INTEGER_TOL = 1e-9


class RiskError(VoltRiskError):
    """Base exception for risk computations."""

    pass


class EmptyLossesError(RiskError):
    """No losses were given."""

    pass


class TailTooSmallError(RiskError):
    """α·K < 1, so the tail holds no complete sample."""

    pass


def as_losses(losses: Losses) -> np.ndarray:
    """Validate and flatten a loss sample."""
    values = np.asarray(losses, dtype=float).ravel()
    if values.size == 0:
        raise EmptyLossesError("Loss sample is empty")
    if not np.all(np.isfinite(values)):
        raise RiskError("Loss sample contains non-finite values")
    return values


def check_alpha(alpha: float) -> float:
    """Require 0 < alpha <= 1."""
    if not 0.0 < alpha <= 1.0:
        raise RiskError(f"alpha must lie in (0, 1], got {alpha}")
    return float(alpha)


def tail_size(alpha: float, n: int) -> float:
    """α·K, the (possibly fractional) number of tail samples."""
    return alpha * n


def var(losses: Losses, alpha: float) -> float:
    """
    Value-at-risk: the ⌈(1-α)K⌉-th smallest loss.

    Args:
        losses: Loss sample
        alpha: Tail probability in (0, 1]

    Returns:
        The VaR threshold
    """
    values = np.sort(as_losses(losses))
    alpha = check_alpha(alpha)
    k = values.size
    rank = math.ceil((1.0 - alpha) * k - _INTEGER_TOL)
    return float(values[max(rank, 1) - 1])


def cvar_rockafellar(losses: Losses, alpha: float) -> Tuple[float, float]:
    """
    Exact CVaR by minimizing the Rockafellar objective over all K candidates.

    Args:
        losses: Loss sample
        alpha: Tail probability in (0, 1]

    Returns:
        (cvar, beta_star) with beta_star the smallest minimizer
    """
    values = np.sort(as_losses(losses))
    alpha = check_alpha(alpha)
    k = values.size
    # Σ_{i>j} (l_i - l_j) for every candidate position j
    suffix = np.concatenate([np.cumsum(values[::-1])[::-1][1:], [0.0]])
    above = np.arange(k - 1, -1, -1)
    objective = values + (suffix - above * values) / (alpha * k)
    best = float(objective.min())
    scale = max(1.0, float(np.abs(values).max()))
    j = int(np.flatnonzero(objective <= best + 1e-12 * scale)[0])
    return best, float(values[j])


def cvar_indicator(losses: Losses, alpha: float) -> float:
    """
    CVaR as the mean of the αK largest losses.

    When αK is not an integer the Rockafellar value is returned instead.

    Raises:
        TailTooSmallError: If αK < 1
    """
    values = as_losses(losses)
    alpha = check_alpha(alpha)
    tail = tail_size(alpha, values.size)
    if tail < 1.0 - _INTEGER_TOL:
        raise TailTooSmallError(
            f"alpha·K = {tail:g} < 1 for {values.size} losses at alpha={alpha}"
        )
    count = round(tail)
    if abs(tail - count) > _INTEGER_TOL:
        return cvar_rockafellar(values, alpha)[0]
    return float(np.mean(np.sort(values)[values.size - count :]))


def cvar(losses: Losses, alpha: float) -> float:
    """CVaR of a sample (Rockafellar form)."""
    return cvar_rockafellar(losses, alpha)[0]


def rockafellar_objective(losses: Losses, alpha: float, beta: float) -> float:
    """β + (1/(αK)) Σ [l_k - β]₊ at a given β."""
    values = as_losses(losses)
    alpha = check_alpha(alpha)
    return float(beta + np.maximum(values - beta, 0.0).sum() / (alpha * values.size))


class SmoothedCvar(NamedTuple):
    """Softplus-smoothed CVaR with its derivatives."""

    value: float
    d_losses: np.ndarray
    d_beta: float


def smoothed_cvar(losses: Losses, alpha: float, beta: float, tau: float) -> float:
    """
    Softplus-smoothed Rockafellar objective.

    β + (1/(αK)) Σ τ·log(1 + exp((l_k - β)/τ)), evaluated with logaddexp so
    large arguments do not overflow.

    Args:
        losses: Loss sample
        alpha: Tail probability in (0, 1]
        beta: Auxiliary threshold
        tau: Sharpness, > 0

    Returns:
        Smoothed objective value, always >= the exact objective at beta
    """
    return smoothed_cvar_grad(losses, alpha, beta, tau).value


def smoothed_cvar_grad(losses: Losses, alpha: float, beta: float, tau: float) -> SmoothedCvar:
    """
    Smoothed CVaR and its derivatives wrt every loss and wrt β.

    ∂/∂l_k = σ((l_k - β)/τ) / (αK) and ∂/∂β = 1 - Σ_k ∂/∂l_k, with σ the
    logistic function.
    """
    values = as_losses(losses)
    alpha = check_alpha(alpha)
    if not tau > 0.0:
        raise RiskError(f"Smoothing sharpness tau must be positive, got {tau}")
    scaled = (values - beta) / tau
    weight = 1.0 / (alpha * values.size)
    value = beta + weight * tau * float(np.logaddexp(0.0, scaled).sum())
    d_losses = weight * expit(scaled)
    return SmoothedCvar(value, d_losses, 1.0 - float(d_losses.sum()))
