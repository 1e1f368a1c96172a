"""
Training losses of the shared policy and their exact gradients.

Per-sample losses over a batch of B samples and m DER nodes:

    prediction error   e_k = Σ_n (q̂_nk - z_nk)²
    voltage loss       ℓ_k = τ_v · logsumexp(|v̂_k| / τ_v),  v̂_k = X_:D q̂_k + h_k

The average loss is f = (1/B) Σ_k e_k. Both CVaR terms use the softplus-
smoothed Rockafellar objective with their own auxiliary β.
"""

import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.special import logsumexp, softmax

from voltrisk.feeder.models import FeederModel, SensitivityPair
from voltrisk.nn.policy import (
    EmptyBatchError,
    FeatureSet,
    InvalidModeError,
    PolicyError,
    PolicyParams,
    backward,
    build_features,
    forward_trace,
)
from voltrisk.opf.models import DatasetSample
from voltrisk.opf.solver import load_offset
from voltrisk.risk.measures import TailTooSmallError, cvar_rockafellar, smoothed_cvar_grad

logger = logging.getLogger(__name__)


class LossMode(str, Enum):
    """Which risk terms join the average prediction loss."""

    MSE = "mse"
    CVAR_Q = "cvar_q"
    CVAR_QV = "cvar_qv"

    @property
    def uses_q(self) -> bool:
        return self in (LossMode.CVAR_Q, LossMode.CVAR_QV)

    @property
    def uses_v(self) -> bool:
        return self is LossMode.CVAR_QV

    @property
    def label(self) -> str:
        return {
            LossMode.MSE: "MSE",
            LossMode.CVAR_Q: "CVaR(qg)",
            LossMode.CVAR_QV: "CVaR(qg,dv)",
        }[self]


_MODE_ALIASES = {
    "mse": LossMode.MSE,
    "cvar_q": LossMode.CVAR_Q,
    "cvar(qg)": LossMode.CVAR_Q,
    "mse+cvar(qg)": LossMode.CVAR_Q,
    "cvar_qv": LossMode.CVAR_QV,
    "cvar(qg,dv)": LossMode.CVAR_QV,
    "mse+cvar(qg,dv)": LossMode.CVAR_QV,
}


def parse_mode(value: Union[str, LossMode]) -> LossMode:
    """
    Parse a loss mode, accepting mse/cvar_q/cvar_qv and the MSE, CVaR(qg),
    CVaR(qg,dv) spellings in any case.
    """
    if isinstance(value, LossMode):
        return value
    key = re.sub(r"\s+", "", str(value)).lower()
    if key not in _MODE_ALIASES:
        raise InvalidModeError(
            f"Unknown loss mode '{value}' (expected one of mse, cvar_q, cvar_qv)"
        )
    return _MODE_ALIASES[key]


class LossConfig(BaseModel):
    """Loss weights and smoothing shared by training and evaluation."""

    model_config = ConfigDict(validate_assignment=True)

    mode: LossMode = LossMode.MSE
    alpha: float = Field(default=0.2, gt=0.0, lt=1.0)
    lambda_q: float = Field(default=1.0, ge=0.0)
    lambda_v: float = Field(default=1.0, ge=0.0)
    mse_weight: float = Field(default=1.0, ge=0.0)
    tau: float = Field(default=1e-2, gt=0.0)
    voltage_tau: Optional[float] = Field(default=None, gt=0.0)

    @field_validator("mode", mode="before")
    @classmethod
    def coerce_mode(cls, value: Union[str, LossMode]) -> LossMode:
        try:
            return parse_mode(value)
        except InvalidModeError as e:
            raise ValueError(str(e)) from e

    @property
    def smooth_max_tau(self) -> float:
        return self.voltage_tau if self.voltage_tau is not None else self.tau


@dataclass(eq=False)
class SampleBatch:
    """
    Model inputs and labels for a set of samples.

    features: (B, m, d0) raw features
    targets: (B, m) optimal DER dispatch
    h: (B, N) voltage deviation without inverter support
    q_limits: (B, m) reactive limits for inference clamping
    der: DER bus positions
    """

    features: np.ndarray
    targets: np.ndarray
    h: np.ndarray
    q_limits: np.ndarray
    der: np.ndarray

    @property
    def size(self) -> int:
        return int(self.features.shape[0])

    def take(self, indices: np.ndarray) -> "SampleBatch":
        indices = np.asarray(indices, dtype=np.int64)
        return SampleBatch(
            features=self.features[indices],
            targets=self.targets[indices],
            h=self.h[indices],
            q_limits=self.q_limits[indices],
            der=self.der,
        )


def make_batch(
    samples: List[DatasetSample],
    model: FeederModel,
    s: SensitivityPair,
    feature_set: Union[str, FeatureSet] = FeatureSet.BROADCAST,
) -> SampleBatch:
    """Stack dataset samples into a SampleBatch."""
    der = model.der_indices
    if not samples:
        m, d0 = der.size, FeatureSet.parse(feature_set).width
        return SampleBatch(
            np.zeros((0, m, d0)), np.zeros((0, m)), np.zeros((0, model.n_buses)),
            np.zeros((0, m)), der,
        )
    p_gen = np.stack([sample.condition.p_gen for sample in samples])
    p_load = np.stack([sample.condition.p_load for sample in samples])
    q_load = np.stack([sample.condition.q_load for sample in samples])
    return SampleBatch(
        features=build_features(p_gen, p_load, q_load, der, feature_set),
        targets=np.stack([sample.solution.q_gen[der] for sample in samples]),
        h=np.stack([load_offset(sample.condition, s) for sample in samples]),
        q_limits=np.stack(
            [model.reactive_limits(sample.condition.p_gen)[der] for sample in samples]
        ),
        der=der,
    )


class LossGrad(NamedTuple):
    """A loss value, its φ gradient and (for CVaR terms) its β derivative."""

    loss: float
    grads: np.ndarray
    grad_beta: float = 0.0


class CombinedLossGrad(NamedTuple):
    loss: float
    grads: np.ndarray
    grad_beta_q: float
    grad_beta_v: float
    components: Dict[str, float]


def _require_batch(batch: SampleBatch) -> None:
    if batch.size == 0:
        raise EmptyBatchError("Loss evaluated on an empty batch")


def _require_tail(batch: SampleBatch, alpha: float) -> None:
    if batch.size < 2:
        raise TailTooSmallError(f"CVaR losses need at least 2 samples, got {batch.size}")
    if alpha * batch.size < 1.0 - 1e-9:
        raise TailTooSmallError(
            f"alpha·|B| = {alpha * batch.size:g} < 1 for batch of {batch.size}"
        )


def prediction_errors(params: PolicyParams, batch: SampleBatch) -> np.ndarray:
    """Per-sample squared prediction error e_k."""
    outputs, _ = forward_trace(params, batch.features)
    return np.sum((outputs - batch.targets) ** 2, axis=1)


def predicted_voltages(
    params: PolicyParams, batch: SampleBatch, s: SensitivityPair, clamp: bool = False
) -> np.ndarray:
    """(B, N) voltage deviations under the predicted dispatch."""
    outputs, _ = forward_trace(params, batch.features)
    if clamp:
        outputs = np.clip(outputs, -batch.q_limits, batch.q_limits)
    return outputs @ s.X[:, batch.der].T + batch.h


def smooth_voltage_losses(v: np.ndarray, tau: float) -> np.ndarray:
    """Per-sample τ·logsumexp(|v|/τ), a smooth upper bound of max |v|."""
    return tau * logsumexp(np.abs(v) / tau, axis=1)


def mse_loss_grad(params: PolicyParams, batch: SampleBatch) -> LossGrad:
    """
    Average prediction loss (1/B) Σ_k Σ_n (q̂_nk - z_nk)² and its gradient.
    """
    _require_batch(batch)
    outputs, cache = forward_trace(params, batch.features)
    residual = outputs - batch.targets
    loss = float(np.sum(residual**2) / batch.size)
    grads = backward(params, cache, 2.0 * residual / batch.size)
    return LossGrad(loss, grads)


def cvar_q_loss_grad(
    params: PolicyParams, batch: SampleBatch, alpha: float, tau: float
) -> LossGrad:
    """
    Smoothed CVaR of the per-sample prediction errors.

    Uses β = params.beta_q, or the batch-mean error when it is unset.

    Returns:
        LossGrad with grad_beta = 1 - (1/(α|B|)) Σ σ((e_k - β)/τ)
    """
    _require_batch(batch)
    _require_tail(batch, alpha)
    outputs, cache = forward_trace(params, batch.features)
    residual = outputs - batch.targets
    errors = np.sum(residual**2, axis=1)
    beta = float(np.mean(errors)) if params.beta_q is None else params.beta_q
    smoothed = smoothed_cvar_grad(errors, alpha, beta, tau)
    d_outputs = 2.0 * residual * smoothed.d_losses[:, None]
    return LossGrad(smoothed.value, backward(params, cache, d_outputs), smoothed.d_beta)


def cvar_v_loss_grad(
    params: PolicyParams,
    batch: SampleBatch,
    s: SensitivityPair,
    alpha: float,
    tau: float,
    voltage_tau: Optional[float] = None,
) -> LossGrad:
    """
    Smoothed CVaR of the per-sample smooth-max voltage deviation.

    Gradients reach every node's shared weights through X.

    Args:
        params: Policy, β = params.beta_v (batch mean when unset)
        batch: Samples
        s: Sensitivity matrices
        alpha: Tail probability
        tau: CVaR softplus sharpness
        voltage_tau: Temperature of the smooth max over buses, defaults to tau
    """
    _require_batch(batch)
    _require_tail(batch, alpha)
    tau_v = tau if voltage_tau is None else voltage_tau
    outputs, cache = forward_trace(params, batch.features)
    x_der = s.X[:, batch.der]
    v = outputs @ x_der.T + batch.h
    losses = smooth_voltage_losses(v, tau_v)
    beta = float(np.mean(losses)) if params.beta_v is None else params.beta_v
    smoothed = smoothed_cvar_grad(losses, alpha, beta, tau)

    # ∂ℓ_k/∂v_kn = softmax_n(|v_k|/τ_v) · sign(v_kn)
    d_v = softmax(np.abs(v) / tau_v, axis=1) * np.sign(v) * smoothed.d_losses[:, None]
    d_outputs = d_v @ x_der
    return LossGrad(smoothed.value, backward(params, cache, d_outputs), smoothed.d_beta)


def combined_loss_grad(
    params: PolicyParams,
    batch: SampleBatch,
    cfg: LossConfig,
    s: Optional[SensitivityPair] = None,
) -> CombinedLossGrad:
    """
    Risk-regularized objective mse_weight·f + λ_q·γ(qg) + λ_v·γ(dv).

    Terms absent from cfg.mode have weight 0 and are not evaluated.

    Args:
        params: Policy
        batch: Samples
        cfg: Mode, weights and smoothing
        s: Sensitivity matrices, required when the voltage term is active

    Returns:
        Weighted loss, weighted φ gradient, the β derivatives of the weighted
        loss and the unweighted term values
    """
    mode = parse_mode(cfg.mode)
    _require_batch(batch)

    mse = mse_loss_grad(params, batch)
    loss = cfg.mse_weight * mse.loss
    grads = cfg.mse_weight * mse.grads
    components = {"mse": mse.loss}
    grad_beta_q = 0.0
    grad_beta_v = 0.0

    if mode.uses_q:
        term = cvar_q_loss_grad(params, batch, cfg.alpha, cfg.tau)
        loss += cfg.lambda_q * term.loss
        grads = grads + cfg.lambda_q * term.grads
        grad_beta_q = cfg.lambda_q * term.grad_beta
        components["cvar_q"] = term.loss

    if mode.uses_v:
        if s is None:
            raise PolicyError("The voltage CVaR term needs sensitivity matrices")
        term = cvar_v_loss_grad(
            params, batch, s, cfg.alpha, cfg.tau, cfg.voltage_tau
        )
        loss += cfg.lambda_v * term.loss
        grads = grads + cfg.lambda_v * term.grads
        grad_beta_v = cfg.lambda_v * term.grad_beta
        components["cvar_v"] = term.loss

    return CombinedLossGrad(float(loss), grads, grad_beta_q, grad_beta_v, components)


def batch_cvar(
    params: PolicyParams,
    batch: SampleBatch,
    cfg: LossConfig,
    s: Optional[SensitivityPair] = None,
) -> float:
    """
    Exact empirical CVaR of a batch, used to gate updates.

    Sums the CVaR of every risk term in cfg.mode; in MSE mode the prediction
    error CVaR is used.
    """
    mode = parse_mode(cfg.mode)
    _require_batch(batch)
    outputs, _ = forward_trace(params, batch.features)
    total = 0.0
    if mode is LossMode.MSE or mode.uses_q:
        errors = np.sum((outputs - batch.targets) ** 2, axis=1)
        total += cvar_rockafellar(errors, cfg.alpha)[0]
    if mode.uses_v:
        if s is None:
            raise PolicyError("The voltage CVaR term needs sensitivity matrices")
        v = outputs @ s.X[:, batch.der].T + batch.h
        total += cvar_rockafellar(smooth_voltage_losses(v, cfg.smooth_max_tau), cfg.alpha)[0]
    return float(total)


def initial_betas(
    params: PolicyParams,
    batch: SampleBatch,
    cfg: LossConfig,
    s: Optional[SensitivityPair] = None,
) -> PolicyParams:
    """Set unset β values to the batch-mean loss of their term."""
    mode = parse_mode(cfg.mode)
    beta_q, beta_v = params.beta_q, params.beta_v
    if beta_q is None and mode.uses_q:
        beta_q = float(np.mean(prediction_errors(params, batch)))
    if beta_v is None and mode.uses_v and s is not None:
        v = predicted_voltages(params, batch, s)
        beta_v = float(np.mean(smooth_voltage_losses(v, cfg.smooth_max_tau)))
    return params.with_betas(beta_q, beta_v)
