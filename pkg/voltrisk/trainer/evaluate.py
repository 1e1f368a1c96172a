"""
Test-split evaluation of a trained policy.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from voltrisk.feeder.models import FeederModel, SensitivityPair
from voltrisk.nn.losses import make_batch
from voltrisk.nn.policy import PolicyParams, forward
from voltrisk.opf.models import DatasetSample
from voltrisk.risk.report import RiskReport, max_abs_deviation, risk_report
from voltrisk.trainer.loop import EmptySplitError

logger = logging.getLogger(__name__)

# Slack on the voltage bounds when counting violations
VIOLATION_TOL = 1e-9


class VoltageStats(BaseModel):
    """Voltage outcome of one dispatch over a split."""

    max_abs_v: float
    n_violating_samples: int
    n_violations: int
    risk: RiskReport
    max_deviation: List[float]


class EvalReport(BaseModel):
    """
    Accuracy and voltage risk of a policy on a dataset split.

    qg_error_pct is 100 · mean_k ‖q̂_k - z_k‖ / mean_k ‖z_k‖ over the split, a
    ratio of averages rather than an average of per-sample ratios. It is None
    when every label is zero.
    """

    n_samples: int
    alpha: float
    qg_error_pct: Optional[float]
    der_buses: List[str]
    per_node_error_mean: List[float]
    per_node_error_std: List[float]
    predicted: VoltageStats
    optimal: VoltageStats

    @property
    def max_abs_v(self) -> float:
        return self.predicted.max_abs_v


def voltage_stats(
    v: np.ndarray, v_bounds: Sequence[float], alpha: float
) -> VoltageStats:
    """
    Summarize a (K, N) array of voltage deviations.

    Args:
        v: Voltage deviations per sample and bus
        v_bounds: (lower, upper) deviation bounds
        alpha: Tail probability for the risk report
    """
    lower, upper = v_bounds
    outside = (v > upper + VIOLATION_TOL) | (v < lower - VIOLATION_TOL)
    deviation = max_abs_deviation(v)
    return VoltageStats(
        max_abs_v=float(deviation.max()),
        n_violating_samples=int(np.sum(outside.any(axis=1))),
        n_violations=int(np.sum(outside)),
        risk=risk_report(deviation, alpha),
        max_deviation=deviation.tolist(),
    )


def evaluate(
    params: PolicyParams,
    samples: List[DatasetSample],
    s: SensitivityPair,
    model: FeederModel,
    alpha: float,
    clamp: bool = True,
) -> EvalReport:
    """
    Evaluate a policy against the optimal dispatch of a split.

    Voltages use the exact max over buses, not the smooth max used in
    training.

    Args:
        params: Trained policy
        samples: Dataset split (usually Dataset.test)
        s: Sensitivity matrices
        model: Feeder
        alpha: Tail probability for the risk reports
        clamp: Clamp predictions to each inverter's reactive limit

    Returns:
        EvalReport

    Raises:
        EmptySplitError: If samples is empty
    """
    if not samples:
        raise EmptySplitError("Cannot evaluate on an empty split")

    batch = make_batch(samples, model, s, params.feature_set)
    predictions = forward(params, batch.features, batch.q_limits if clamp else None)
    x_der = s.X[:, batch.der]

    errors = predictions - batch.targets
    label_norm = float(np.mean(np.linalg.norm(batch.targets, axis=1)))
    error_norm = float(np.mean(np.linalg.norm(errors, axis=1)))
    if label_norm > 0.0:
        qg_error_pct: Optional[float] = 100.0 * error_norm / label_norm
    else:
        logger.warning("All labels are zero; percentage error is undefined")
        qg_error_pct = None

    abs_errors = np.abs(errors)
    predicted_v = predictions @ x_der.T + batch.h
    optimal_v = batch.targets @ x_der.T + batch.h

    report = EvalReport(
        n_samples=len(samples),
        alpha=alpha,
        qg_error_pct=qg_error_pct,
        der_buses=[model.bus_ids[i] for i in batch.der],
        per_node_error_mean=abs_errors.mean(axis=0).tolist(),
        per_node_error_std=abs_errors.std(axis=0).tolist(),
        predicted=voltage_stats(predicted_v, model.v_bounds, alpha),
        optimal=voltage_stats(optimal_v, model.v_bounds, alpha),
    )
    logger.info(
        "Evaluated %d samples: qg error %s%%, max |v| %.5f (optimal %.5f)",
        report.n_samples,
        "n/a" if qg_error_pct is None else f"{qg_error_pct:.3f}",
        report.predicted.max_abs_v,
        report.optimal.max_abs_v,
    )
    return report
