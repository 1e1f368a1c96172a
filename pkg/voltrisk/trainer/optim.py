"""
Optimizer steps on the flat training vector θ = [φ, β_q, β_v].
"""

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Optional, Tuple

import numpy as np

from voltrisk.exceptions import VoltRiskError, check_length

if TYPE_CHECKING:
    from voltrisk.trainer.config import TrainConfig

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingError(VoltRiskError):
    """Base exception for training and evaluation."""

    pass


class NonFiniteGradientError(TrainingError):
    """A gradient contained NaN or infinity."""

    pass


@dataclass(frozen=True, eq=False)
class OptimizerState:
    """Step count and moment estimates (adaptive-moments only)."""

    step: int = 0
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None


def optimizer_step(
    theta: np.ndarray,
    grads: np.ndarray,
    state: OptimizerState,
    cfg: "TrainConfig",
) -> Tuple[np.ndarray, OptimizerState]:
    """
    Apply one gradient step.

    sgd: θ - η g. adam: first/second moment estimates with bias correction,
    θ - η m̂ / (sqrt(v̂) + 1e-8), moments decaying at (0.9, 0.999).

    Args:
        theta: Current parameters
        grads: Gradient of the same shape
        state: Optimizer state from the previous step
        cfg: Training configuration (optimizer and eta are used)

    Returns:
        (new parameters, new state)

    Raises:
        NonFiniteGradientError: If grads is not finite
    """
    theta = np.asarray(theta, dtype=float)
    grads = np.asarray(grads, dtype=float)
    check_length("gradient", grads.size, theta.size)
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradientError(
            f"Gradient has {int(np.sum(~np.isfinite(grads)))} non-finite entries"
        )

    eta = cfg.eta
    if cfg.optimizer == "sgd":
        return theta - eta * grads, replace(state, step=state.step + 1)

    step = state.step + 1
    m = np.zeros_like(theta) if state.m is None else state.m
    v = np.zeros_like(theta) if state.v is None else state.v
    m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * grads
    v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * grads**2
    m_hat = m / (1.0 - ADAM_BETA1**step)
    v_hat = v / (1.0 - ADAM_BETA2**step)
    theta = theta - eta * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return theta, OptimizerState(step=step, m=m, v=v)
