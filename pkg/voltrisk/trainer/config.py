"""
Training configuration.
"""

import math
from typing import Literal, Tuple

from pydantic import Field, field_validator, model_validator

from voltrisk.nn.losses import LossConfig
from voltrisk.nn.policy import DEFAULT_HIDDEN, FeatureSet


class TrainConfig(LossConfig):
    """
    Hyperparameters of one training arm.

    Inherits the loss settings (mode, alpha, lambda_q, lambda_v, mse_weight,
    tau, voltage_tau) from LossConfig.
    """

    eta: float = Field(default=1e-3, gt=0.0)
    batch_size: int = Field(default=64, ge=2)
    epsilon: float = Field(default=1e-6, gt=0.0)
    max_epochs: int = Field(default=200, ge=1)
    selection_enabled: bool = False
    threshold_reset: bool = True
    optimizer: Literal["sgd", "adam"] = "sgd"
    seed: int = 0
    hidden_widths: Tuple[int, ...] = DEFAULT_HIDDEN
    feature_set: FeatureSet = FeatureSet.BROADCAST
    divergence_limit: float = Field(default=1e6, gt=0.0)

    @field_validator("optimizer", mode="before")
    @classmethod
    def coerce_optimizer(cls, value: str) -> str:
        value = str(value).lower()
        if value in ("adaptive-moments", "adaptive_moments"):
            return "adam"
        return value

    @field_validator("hidden_widths")
    @classmethod
    def check_hidden(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(width < 1 for width in value):
            raise ValueError("hidden layer widths must be positive")
        return value

    @model_validator(mode="after")
    def check_batch_size(self) -> "TrainConfig":
        minimum = math.ceil(1.0 / self.alpha - 1e-9)
        if self.batch_size < minimum:
            raise ValueError(
                f"batch_size {self.batch_size} is below ceil(1/alpha) = {minimum}"
            )
        return self
