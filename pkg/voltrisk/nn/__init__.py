"""
Shared per-node MLP policy, its losses and exact gradients.
"""

from voltrisk.nn.losses import (
    CombinedLossGrad,
    LossConfig,
    LossGrad,
    LossMode,
    SampleBatch,
    batch_cvar,
    combined_loss_grad,
    cvar_q_loss_grad,
    cvar_v_loss_grad,
    initial_betas,
    make_batch,
    mse_loss_grad,
    parse_mode,
    predicted_voltages,
    prediction_errors,
    smooth_voltage_losses,
)
from voltrisk.nn.policy import (
    DEFAULT_HIDDEN,
    EmptyBatchError,
    FeatureSet,
    ForwardCache,
    InvalidModeError,
    PolicyError,
    PolicyParams,
    ShapeMismatchError,
    backward,
    build_features,
    condition_features,
    feature_stats,
    forward,
    forward_trace,
    init_policy,
    load_policy,
    predict_all,
    save_policy,
)

__all__ = [
    "PolicyParams",
    "FeatureSet",
    "ForwardCache",
    "DEFAULT_HIDDEN",
    "PolicyError",
    "ShapeMismatchError",
    "InvalidModeError",
    "EmptyBatchError",
    "init_policy",
    "build_features",
    "condition_features",
    "feature_stats",
    "forward",
    "forward_trace",
    "backward",
    "predict_all",
    "save_policy",
    "load_policy",
    "LossMode",
    "LossConfig",
    "LossGrad",
    "CombinedLossGrad",
    "SampleBatch",
    "make_batch",
    "parse_mode",
    "mse_loss_grad",
    "cvar_q_loss_grad",
    "cvar_v_loss_grad",
    "combined_loss_grad",
    "batch_cvar",
    "initial_betas",
    "prediction_errors",
    "predicted_voltages",
    "smooth_voltage_losses",
]
